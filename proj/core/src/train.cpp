#include "apcon/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "apcon/binary_io.hpp"
#include "apcon/errors.hpp"

namespace apcon {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("decay_every must be positive");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (n_int < 1 || n_bdy < 1) throw ConfigError("n_int and n_bdy must be positive");
  if (n_init < 0) throw ConfigError("n_init must be non-negative");
  if (velocities_per_point < 1) throw ConfigError("velocities_per_point must be positive");
  if (eval_every < 1 || checkpoint_every < 1) throw ConfigError("eval_every and checkpoint_every must be positive");
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw DomainError("epoch must be non-negative");
  return cfg.lr0 * std::pow(cfg.decay, epoch / cfg.decay_every);
}

void adam_step(AdamState& s, ParameterVector& params, std::span<const double> gradient, double lr) {
  auto theta = params.values();
  if (gradient.size() != theta.size() || s.m.size() != theta.size() || s.v.size() != theta.size())
    throw ShapeError("adam_step: parameter, gradient and state sizes differ");
  for (std::size_t i = 0; i < gradient.size(); ++i)
    if (!std::isfinite(gradient[i]))
      throw NumericError("non-finite gradient in segment '" + params.segment_name_at(i) + "'");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = gradient[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    theta[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
}

CollocationBatch sample_collocation(const ProblemSpec& problem, int n_int, int n_bdy, int n_init,
                                    const InputGrid& grid, std::mt19937_64& rng, int group) {
  if (group < 1) throw ConfigError("velocity group size must be positive");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Open-interval draw: rejects the (measure-zero) left end point.
  auto open = [&](double a, double b) {
    double u;
    do u = unit(rng);
    while (u == 0.0);
    return a + (b - a) * u;
  };
  CollocationBatch c;
  c.interior.resize(3, n_int);
  double t = 0.0, x = 0.0;
  for (int i = 0; i < n_int; ++i) {
    if (i % group == 0) {
      t = open(0.0, problem.t_max);
      x = open(problem.x_left, problem.x_right);
    }
    c.interior.col(i) << t, x, open(-1.0, 1.0);
  }
  const int n_left = (n_bdy + 1) / 2;
  for (int i = 0; i < n_bdy; ++i) {
    BoundaryPoint p;
    p.side = i < n_left ? Side::Left : Side::Right;
    const int k = p.side == Side::Left ? i : i - n_left;
    if (k % group == 0) t = problem.t_max * unit(rng);
    p.t = t;
    const double u = unit(rng);
    if (problem.boundary == BoundaryKind::Inflow)
      p.v = p.side == Side::Left ? 1.0 - u : -1.0 + u;
    else
      p.v = -1.0 + 2.0 * u;
    c.boundary.push_back(p);
  }
  const auto total = static_cast<std::size_t>(grid.size());
  std::vector<Eigen::Index> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (n_init > 0 && static_cast<std::size_t>(n_init) < total) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_init); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(static_cast<std::size_t>(n_init));
    // Flat order groups points sharing x, so risk chunks reuse node evaluations.
    std::sort(idx.begin(), idx.end());
  }
  c.initial = std::move(idx);
  return c;
}

double mean_test_error(const OperatorModel& model, const ProblemSpec& problem, const Eigen::MatrixXd& test_a,
                       const std::vector<DensityField>& references, const EvalGrid& grid) {
  if (static_cast<std::size_t>(test_a.cols()) != references.size())
    throw ShapeError("one reference per test sample is required");
  if (references.empty()) throw ConfigError("no test samples");
  const Eigen::MatrixXd pred = predict_density(model.fields(), &model.params(), problem, test_a, grid.points());
  const auto nt = static_cast<Eigen::Index>(grid.t.size()), nx = static_cast<Eigen::Index>(grid.x.size());
  double sum = 0.0;
  for (Eigen::Index s = 0; s < pred.rows(); ++s) {
    Eigen::MatrixXd rho(nt, nx);
    for (Eigen::Index i = 0; i < nt; ++i) rho.row(i) = pred.row(s).segment(i * nx, nx);
    sum += relative_l2(rho, references[static_cast<std::size_t>(s)].rho);
  }
  return sum / static_cast<double>(pred.rows());
}

namespace {

void write_checkpoint(const std::string& dir, const std::string& name, const std::string& config_text,
                      std::int64_t epoch, const ParameterVector& params, const AdamState& adam) {
  std::filesystem::create_directories(dir);
  Checkpoint ck{config_text, text_hash(config_text), epoch, params, adam};
  ck.save((std::filesystem::path(dir) / name).string());
}

}  // namespace

FitResult fit(OperatorModel& model, const Dataset& data, const ProblemSpec& problem, const TrainConfig& cfg,
              const std::vector<DensityField>* refs, const EvalGrid* eval_grid, const std::string& config_text,
              const EpochCallback& on_epoch) {
  cfg.validate();
  problem.validate();
  if (data.train.empty()) throw ConfigError("training set is empty");
  if (refs != nullptr && (eval_grid == nullptr || refs->size() != data.test.size()))
    throw ConfigError("test references need an evaluation grid and one field per test sample");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();

  std::mt19937_64 rng(cfg.seed);
  ParameterVector& params = model.params();
  AdamState adam(params.size());
  const FieldSet fields = model.fields();
  RiskOptions risk = cfg.risk;
  risk.reduction = reduction_from_env(risk.reduction);
  const Eigen::MatrixXd test_a = refs != nullptr ? Dataset::stack(data.test) : Eigen::MatrixXd();

  FitResult result;
  std::vector<double> last_good(params.values().begin(), params.values().end());
  std::vector<double> best;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    const auto epoch_start = clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_batches = (order.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * static_cast<std::size_t>(cfg.batch);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch));
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
      const Eigen::MatrixXd a = Dataset::stack(data.train, idx);
      const CollocationBatch coll =
          sample_collocation(problem, cfg.n_int, cfg.n_bdy, cfg.n_init, data.grid, rng, cfg.velocities_per_point);
      RiskResult rr = evaluate_risk(fields, &params, problem, data.grid, a, coll, true, risk);
      if (!std::isfinite(rr.terms.total)) {
        result.diverged = true;
        result.divergence_reason = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }
      try {
        adam_step(adam, params, rr.gradient, rec.lr);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.divergence_reason = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
      const double wgt = 1.0 / static_cast<double>(n_batches);
      if (rec.terms.interior.empty()) rec.terms.interior.assign(rr.terms.interior.size(), 0.0);
      for (std::size_t f = 0; f < rr.terms.interior.size(); ++f) rec.terms.interior[f] += wgt * rr.terms.interior[f];
      rec.terms.boundary += wgt * rr.terms.boundary;
      rec.terms.initial += wgt * rr.terms.initial;
      rec.terms.total += wgt * rr.terms.total;
    }
    if (result.diverged) {
      std::copy(last_good.begin(), last_good.end(), params.values().begin());
      break;
    }
    rec.loss = rec.terms.total;
    last_good.assign(params.values().begin(), params.values().end());

    const bool last = epoch + 1 == cfg.epochs;
    if (refs != nullptr && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const double err = mean_test_error(model, problem, test_a, *refs, *eval_grid);
      rec.test_error = err;
      result.final_test_error = err;
      if (!result.best_test_error || err < *result.best_test_error) {
        result.best_test_error = err;
        result.best_epoch = epoch;
        best = last_good;
        if (!cfg.checkpoint_dir.empty())
          write_checkpoint(cfg.checkpoint_dir, "best.ckpt", config_text, epoch, params, adam);
      }
    }
    if (!cfg.checkpoint_dir.empty() && ((epoch + 1) % cfg.checkpoint_every == 0 || last)) {
      std::ostringstream name;
      name << "epoch_" << std::setw(5) << std::setfill('0') << epoch + 1 << ".ckpt";
      write_checkpoint(cfg.checkpoint_dir, name.str(), config_text, epoch, params, adam);
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!best.empty()) std::copy(best.begin(), best.end(), params.values().begin());
  result.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return result;
}

std::uint64_t text_hash(const std::string& text) { return io::fnv1a(io::kFnvOffset, text.data(), text.size()); }

namespace {
constexpr char kCheckpointMagic[9] = "APCNCK01";
}

void Checkpoint::save(std::ostream& out) const {
  out.write(kCheckpointMagic, 8);
  io::write<std::uint32_t>(out, 1);
  io::write<std::uint64_t>(out, config_hash);
  io::write_string(out, config_text);
  io::write<std::int64_t>(out, epoch);
  params.save(out);
  io::write<std::int64_t>(out, adam.step);
  io::write<double>(out, adam.beta1);
  io::write<double>(out, adam.beta2);
  io::write<double>(out, adam.eps);
  io::write<std::uint64_t>(out, adam.m.size());
  io::write_doubles(out, adam.m);
  io::write_doubles(out, adam.v);
}

Checkpoint Checkpoint::load(std::istream& in) {
  io::expect_magic(in, kCheckpointMagic);
  if (auto v = io::read<std::uint32_t>(in); v != 1) throw IoError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.config_hash = io::read<std::uint64_t>(in);
  c.config_text = io::read_string(in, 1u << 26);
  if (text_hash(c.config_text) != c.config_hash) throw IoError("checkpoint config hash mismatch");
  c.epoch = io::read<std::int64_t>(in);
  c.params = ParameterVector::load(in);
  c.adam.step = io::read<std::int64_t>(in);
  c.adam.beta1 = io::read<double>(in);
  c.adam.beta2 = io::read<double>(in);
  c.adam.eps = io::read<double>(in);
  const auto n = io::read<std::uint64_t>(in);
  if (n != c.params.size()) throw IoError("corrupt checkpoint: optimizer state size");
  c.adam.m.resize(n);
  c.adam.v.resize(n);
  io::read_doubles(in, c.adam.m);
  io::read_doubles(in, c.adam.v);
  return c;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save(out);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load(in);
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,loss,interior,boundary,initial,lr,test_error,seconds\n" << std::setprecision(10);
  for (const auto& r : history) {
    double interior = 0.0;
    for (double v : r.terms.interior) interior += v;
    out << r.epoch << ',' << r.loss << ',' << interior << ',' << r.terms.boundary << ',' << r.terms.initial << ','
        << r.lr << ',';
    if (r.test_error) out << *r.test_error;
    out << ',' << r.seconds << '\n';
  }
}

}  // namespace apcon
