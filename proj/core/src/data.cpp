#include "apcon/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "apcon/errors.hpp"

namespace apcon {

double squared_exponential(double z0, double z1, double y0, double y1, double l) {
  const double d0 = z0 - y0, d1 = z1 - y1;
  return std::exp(-(d0 * d0 + d1 * d1) / (2.0 * l * l));
}

GrfSampler::GrfSampler(const Eigen::MatrixX2d& points, double l) {
  if (!(l > 0.0)) throw ConfigError("GRF length scale must be positive");
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      k(i, j) = squared_exponential(points(i, 0), points(i, 1), points(j, 0), points(j, 1), l);
  for (double jitter = 1e-6; jitter <= 1e-4 * (1.0 + 1e-12); jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      jitter_ = jitter;
      return;
    }
  }
  throw NumericError("GRF covariance factorisation failed with jitter up to 1e-4");
}

Eigen::VectorXd GrfSampler::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(factor_.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return factor_.triangularView<Eigen::Lower>() * z;
}

std::vector<double> grf_sample(const Eigen::MatrixX2d& points, double l, std::mt19937_64& rng) {
  Eigen::VectorXd s = GrfSampler(points, l).sample(rng);
  return {s.data(), s.data() + s.size()};
}

Eigen::MatrixX2d grid_points(const InputGrid& grid) {
  Eigen::MatrixX2d p(grid.size(), 2);
  for (Eigen::Index i = 0; i < grid.size(); ++i) p.row(i) << grid.x_at(i), grid.v_at(i);
  return p;
}

double problem1_initial_value(double x, double v, double f_tilde) {
  const double rp = std::max(v, 0.0), rm = std::max(-v, 0.0);
  return (rp * rp * rp * x + rm * rm * rm * (1.0 - x)) * f_tilde + (1.0 - 0.5 * x);
}

double problem2_initial_value(double x, double v, double r) {
  return r * (1.0 + std::sin(2.0 * std::numbers::pi * x - 0.5 * std::numbers::pi)) * 3.0 *
         std::exp(-0.5 * (3.0 * v) * (3.0 * v));
}

InitialFunctionSample make_problem1_initial(const GrfSampler& sampler, const InputGrid& grid, std::mt19937_64& rng,
                                            int max_rejections) {
  if (sampler.size() != grid.size()) throw ShapeError("GRF sampler does not match the grid");
  InitialFunctionSample s{ProblemId::I, Eigen::VectorXd(grid.size())};
  for (int attempt = 0; attempt <= max_rejections; ++attempt) {
    Eigen::VectorXd f = sampler.sample(rng);
    bool positive = true;
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      s.values(i) = problem1_initial_value(grid.x_at(i), grid.v_at(i), f(i));
      positive = positive && s.values(i) > 0.0;
    }
    if (positive) return s;
  }
  throw ConfigError("no positive initial function after " + std::to_string(max_rejections) +
                    " consecutive rejections");
}

InitialFunctionSample make_problem2_initial(std::mt19937_64& rng, const InputGrid& grid) {
  const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  InitialFunctionSample s{ProblemId::II, Eigen::VectorXd(grid.size())};
  for (Eigen::Index i = 0; i < grid.size(); ++i) s.values(i) = problem2_initial_value(grid.x_at(i), grid.v_at(i), r);
  return s;
}

Eigen::MatrixXd Dataset::stack(const std::vector<InitialFunctionSample>& samples,
                               const std::vector<std::size_t>& indices) {
  if (indices.empty()) return {};
  Eigen::MatrixXd m(samples.at(indices[0]).values.size(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = samples.at(indices[i]).values;
  return m;
}

Eigen::MatrixXd Dataset::stack(const std::vector<InitialFunctionSample>& samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return stack(samples, idx);
}

bool Dataset::operator==(const Dataset& o) const {
  return grid.x == o.grid.x && grid.v == o.grid.v && meta == o.meta && train == o.train && test == o.test;
}

Dataset split(std::vector<InitialFunctionSample> samples, std::uint32_t ratio_train, std::uint32_t ratio_test,
              std::uint64_t shuffle_seed, const InputGrid& grid, DatasetMeta meta) {
  if (ratio_train == 0 || ratio_test == 0) throw ConfigError("split ratio parts must be positive integers");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_test = samples.size() * ratio_test / (ratio_train + ratio_test);
  Dataset d;
  d.grid = grid;
  meta.shuffle_seed = shuffle_seed;
  meta.ratio_train = ratio_train;
  meta.ratio_test = ratio_test;
  meta.m = samples.size();
  d.meta = meta;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < order.size() - n_test ? d.train : d.test).push_back(std::move(samples[order[i]]));
  return d;
}

std::mt19937_64 sample_stream(std::uint64_t master_seed, std::uint64_t k) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  return std::mt19937_64(seq);
}

Dataset generate_dataset(ProblemId problem, std::size_t m, double l, std::uint64_t seed, const InputGrid& grid) {
  std::vector<InitialFunctionSample> samples;
  samples.reserve(m);
  if (problem == ProblemId::I) {
    GrfSampler sampler(grid_points(grid), l);
    for (std::size_t k = 0; k < m; ++k) {
      auto rng = sample_stream(seed, k);
      samples.push_back(make_problem1_initial(sampler, grid, rng));
    }
  } else {
    for (std::size_t k = 0; k < m; ++k) {
      auto rng = sample_stream(seed, k);
      samples.push_back(make_problem2_initial(rng, grid));
    }
  }
  DatasetMeta meta;
  meta.problem = problem;
  meta.l = l;
  meta.seed = seed;
  return split(std::move(samples), 7, 1, seed ^ 0x5eedULL, grid, meta);
}

}  // namespace apcon
