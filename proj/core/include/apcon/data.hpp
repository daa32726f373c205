#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "apcon/grid.hpp"
#include "apcon/physics.hpp"

namespace apcon {

/// exp(−‖z − y‖² / (2l²)).
double squared_exponential(double z0, double z1, double y0, double y1, double l);

/// Mean-zero Gaussian field with squared-exponential covariance on a fixed
/// point set. The covariance is factorised once; each draw costs one
/// triangular matrix-vector product.
class GrfSampler {
 public:
  /// points: n x 2. Diagonal jitter starts at 1e-6 and escalates by 10x up to
  /// 1e-4; NumericError if the factorisation still fails.
  GrfSampler(const Eigen::MatrixX2d& points, double l);

  Eigen::VectorXd sample(std::mt19937_64& rng) const;
  double jitter() const { return jitter_; }
  Eigen::Index size() const { return factor_.rows(); }

 private:
  Eigen::MatrixXd factor_;
  double jitter_ = 0.0;
};

/// One draw at the given points (factorises on every call).
std::vector<double> grf_sample(const Eigen::MatrixX2d& points, double l, std::mt19937_64& rng);

/// Grid points of `grid` in flat order, as an (H*W) x 2 matrix of (x, v).
Eigen::MatrixX2d grid_points(const InputGrid& grid);

struct InitialFunctionSample {
  ProblemId problem = ProblemId::I;
  /// H*W values, flat index h*W + w.
  Eigen::VectorXd values;

  bool operator==(const InitialFunctionSample& o) const { return problem == o.problem && values == o.values; }
};

/// (relu³(v)·x + relu³(−v)·(1 − x))·f̃ + (1 − x/2).
double problem1_initial_value(double x, double v, double f_tilde);
/// r·(1 + sin(2πx − π/2))·3·exp(−(3v)²/2).
double problem2_initial_value(double x, double v, double r);

/// Draws f̃ from `sampler` until the composed f₀ is positive on the whole grid;
/// ConfigError after `max_rejections` consecutive failures.
InitialFunctionSample make_problem1_initial(const GrfSampler& sampler, const InputGrid& grid, std::mt19937_64& rng,
                                            int max_rejections = 100);
InitialFunctionSample make_problem2_initial(std::mt19937_64& rng, const InputGrid& grid);

struct DatasetMeta {
  ProblemId problem = ProblemId::I;
  std::uint64_t m = 0;
  double l = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t shuffle_seed = 0;
  std::uint32_t ratio_train = 7;
  std::uint32_t ratio_test = 1;
  std::string kernel = "squared_exponential";

  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  InputGrid grid;
  DatasetMeta meta;
  std::vector<InitialFunctionSample> train;
  std::vector<InitialFunctionSample> test;

  /// (H*W) x n matrix of the selected samples' values.
  static Eigen::MatrixXd stack(const std::vector<InitialFunctionSample>& samples,
                               const std::vector<std::size_t>& indices);
  static Eigen::MatrixXd stack(const std::vector<InitialFunctionSample>& samples);

  bool operator==(const Dataset& o) const;

  /// Binary layout (little-endian): magic "APCNDS01", u32 version = 1,
  /// u32 problem (1 or 2), u64 H, u64 W, H doubles x-grid, W doubles v-grid,
  /// u64 m, f64 l, u64 seed, u64 shuffle seed, u32 ratio train, u32 ratio
  /// test, string kernel (u32 length + bytes), u64 n_train, u64 n_test, then
  /// (n_train + n_test)*H*W doubles, each sample row-major in (x, v).
  void save(std::ostream& out) const;
  static Dataset load(std::istream& in);
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
  /// CSV with header "split,sample,x,v,value".
  void write_csv(std::ostream& out) const;
};

/// Shuffles with `shuffle_seed`, puts floor(n·test/(train+test)) samples in
/// test and the rest in train.
Dataset split(std::vector<InitialFunctionSample> samples, std::uint32_t ratio_train, std::uint32_t ratio_test,
              std::uint64_t shuffle_seed, const InputGrid& grid, DatasetMeta meta);

/// Per-sample generator stream k of a master seed.
std::mt19937_64 sample_stream(std::uint64_t master_seed, std::uint64_t k);

/// M samples of the given problem on `grid`, split 7:1 with shuffle seed
/// derived from `seed`.
Dataset generate_dataset(ProblemId problem, std::size_t m, double l, std::uint64_t seed, const InputGrid& grid);

}  // namespace apcon
