#include "apcon/experiment.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include "apcon/config.hpp"
#include "apcon/errors.hpp"

namespace apcon {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (m < 8) throw ConfigError("m must be at least 8 so the 7:1 split has a test sample");
  if (!(l > 0.0)) throw ConfigError("correlation length l must be positive");
  if (nt_eval < 2 || nx_eval < 2) throw ConfigError("evaluation grid needs at least 2 points per axis");
  if (reference.nx < 2) throw ConfigError("reference grid needs at least 2 cells");
  train.validate();
}

EvalGrid ExperimentConfig::eval_grid() const {
  const ProblemSpec p = problem_spec();
  return EvalGrid::uniform(p.t_max, nt_eval, nx_eval, p.x_left, p.x_right);
}

InputGrid ExperimentConfig::input_grid() const {
  const ProblemSpec p = problem_spec();
  return InputGrid::uniform(model.height, model.width, p.x_left, p.x_right);
}

std::string ResultRow::rel_l2_text() const {
  if (failed) return "failed";
  if (diverged) return "diverged";
  std::ostringstream s;
  s << std::setprecision(6) << rel_l2;
  return s.str();
}

std::string results_header() {
  return "config_hash,label,method,problem,eps,rel_l2,best_rel_l2,param_count,wall_time_train_s,"
         "wall_time_infer_ms,trials,message";
}

namespace {

std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

std::string csv_field(std::string s) {
  for (char& c : s)
    if (c == '"' || c == '\n') c = '\'';
  return '"' + s + '"';
}

}  // namespace

std::string results_line(const ResultRow& r) {
  std::ostringstream s;
  s << std::setprecision(8) << hex(r.config_hash) << ',' << csv_field(r.label) << ',' << r.method << ',' << r.problem
    << ',' << r.eps << ',' << r.rel_l2_text() << ',';
  if (!r.failed) s << r.rel_l2;
  s << ',' << r.param_count << ',' << r.wall_time_train_s << ',' << r.wall_time_infer_ms << ',' << r.trials << ','
    << csv_field(r.message);
  return s.str();
}

void append_result(const std::string& path, const ResultRow& row) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw IoError("cannot open results file " + path);
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw IoError("cannot lock results file " + path);
  }
  std::string text;
  if (::lseek(fd, 0, SEEK_END) == 0) text = results_header() + '\n';
  text += results_line(row) + '\n';
  const auto written = ::write(fd, text.data(), text.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (written != static_cast<ssize_t>(text.size())) throw IoError("short write to " + path);
}

bool is_diverged(const FitResult& fit) {
  if (fit.diverged) return true;
  if (!fit.final_test_error) return false;
  return !std::isfinite(*fit.final_test_error) || *fit.final_test_error > kDivergenceThreshold;
}

Dataset prepare_dataset(const ExperimentConfig& cfg) {
  const InputGrid grid = cfg.input_grid();
  if (!cfg.dataset_path.empty() && fs::exists(cfg.dataset_path)) {
    Dataset d = Dataset::load(cfg.dataset_path);
    if (d.meta.problem != cfg.problem)
      throw ConfigError("dataset " + cfg.dataset_path + " belongs to problem " + problem_name(d.meta.problem));
    if (d.grid.height() != grid.height() || d.grid.width() != grid.width())
      throw ConfigError("dataset grid does not match the model input shape");
    return d;
  }
  Dataset d = generate_dataset(cfg.problem, cfg.m, cfg.l, cfg.data_seed, grid);
  if (!cfg.dataset_path.empty()) {
    if (const auto parent = fs::path(cfg.dataset_path).parent_path(); !parent.empty()) fs::create_directories(parent);
    d.save(cfg.dataset_path);
  }
  return d;
}

std::vector<DensityField> reference_fields(const ExperimentConfig& cfg, const Dataset& data) {
  const ProblemSpec problem = cfg.problem_spec();
  const EvalGrid grid = cfg.eval_grid();
  std::vector<DensityField> out;
  out.reserve(data.test.size());
  for (const auto& s : data.test) out.push_back(solve_transport_ap(problem, cfg.reference, data.grid, s.values, grid));
  return out;
}

namespace {

void write_field_csv(const fs::path& path, const DensityField& f) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  f.write_csv(out);
}

DensityField as_field(const EvalGrid& grid, const Eigen::RowVectorXd& flat) {
  DensityField f;
  f.t_grid = grid.t;
  f.x_grid = grid.x;
  const auto nt = static_cast<Eigen::Index>(grid.t.size()), nx = static_cast<Eigen::Index>(grid.x.size());
  f.rho.resize(nt, nx);
  for (Eigen::Index i = 0; i < nt; ++i) f.rho.row(i) = flat.segment(i * nx, nx);
  return f;
}

}  // namespace

ResultRow run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  ResultRow row;
  row.label = cfg.label;
  row.method = method_name(cfg.model.method);
  row.problem = problem_name(cfg.problem);
  row.eps = cfg.eps;
  row.trials = cfg.trials;
  const std::string config_text = canonical_text(cfg);
  row.config_hash = text_hash(config_text);
  try {
    cfg.validate();
    const ProblemSpec problem = cfg.problem_spec();
    const EvalGrid grid = cfg.eval_grid();
    fs::path run_dir;
    if (!cfg.output_dir.empty()) {
      run_dir = fs::path(cfg.output_dir) / ("run_" + hex(row.config_hash));
      fs::create_directories(run_dir);
      std::ofstream(run_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    }
    const Dataset data = prepare_dataset(cfg);
    const std::vector<DensityField> refs = reference_fields(cfg, data);
    if (!run_dir.empty())
      for (std::size_t s = 0; s < refs.size(); ++s)
        write_field_csv(run_dir / ("reference_sample" + std::to_string(s) + ".csv"), refs[s]);

    std::unique_ptr<OperatorModel> best;
    bool best_diverged = true;
    double best_err = std::numeric_limits<double>::infinity();
    std::string reasons;
    for (int k = 0; k < cfg.trials; ++k) {
      auto model = std::make_unique<OperatorModel>(cfg.model);
      TrainConfig tc = cfg.train;
      tc.seed = cfg.train.seed + static_cast<std::uint64_t>(k);
      model->initialize(tc.seed);
      if (!run_dir.empty() && tc.checkpoint_dir.empty())
        tc.checkpoint_dir = (run_dir / ("trial" + std::to_string(k))).string();
      const FitResult fr = fit(*model, data, problem, tc, &refs, &grid, config_text, on_epoch);
      if (!run_dir.empty()) {
        std::ofstream h(run_dir / ("trial" + std::to_string(k) + "_history.csv"));
        write_history_csv(h, fr.history);
      }
      const bool diverged = is_diverged(fr);
      const double err = fr.best_test_error.value_or(std::numeric_limits<double>::infinity());
      if (diverged) {
        std::ostringstream why;
        if (fr.diverged)
          why << fr.divergence_reason;
        else
          why << "end-of-training error " << fr.final_test_error.value_or(0.0);
        reasons += (reasons.empty() ? "" : "; ") + ("trial " + std::to_string(k) + ": " + why.str());
      }
      // Converged trials always beat diverged ones; ties go to the lower error.
      const bool better = (!diverged && best_diverged) || (diverged == best_diverged && err < best_err) || !best;
      if (better) {
        best = std::move(model);
        best_diverged = diverged;
        best_err = err;
        row.wall_time_train_s = fr.seconds;
      }
    }
    row.param_count = best->param_count();
    row.rel_l2 = best_err;
    row.diverged = best_diverged;
    if (best_diverged) row.message = reasons;

    const Eigen::MatrixXd test_a = Dataset::stack(data.test);
    row.wall_time_infer_ms = time_inference(*best, problem, test_a.col(0), grid, 5).mean_ms;
    if (!run_dir.empty()) {
      const Eigen::MatrixXd pred = predict_density(best->fields(), &best->params(), problem, test_a, grid.points());
      for (Eigen::Index s = 0; s < pred.rows(); ++s)
        write_field_csv(run_dir / ("predicted_sample" + std::to_string(s) + ".csv"), as_field(grid, pred.row(s)));
      Checkpoint ck{config_text, row.config_hash, cfg.train.epochs, best->params(), AdamState(best->param_count())};
      ck.save((run_dir / "model.ckpt").string());
    }
  } catch (const std::exception& e) {
    row.failed = true;
    row.message = e.what();
  }
  if (!cfg.results_csv.empty()) append_result(cfg.results_csv, row);
  return row;
}

LoadedModel load_model(const std::string& checkpoint_path) {
  const Checkpoint ck = Checkpoint::load(checkpoint_path);
  LoadedModel out;
  try {
    out.config = experiment_from_json(nlohmann::json::parse(ck.config_text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint configuration is not valid JSON: " + std::string(e.what()));
  }
  out.model = std::make_unique<OperatorModel>(out.config.model);
  if (out.model->params().layout_hash() != ck.params.layout_hash())
    throw ConfigError("checkpoint parameters do not match the layout of its configuration");
  std::copy(ck.params.values().begin(), ck.params.values().end(), out.model->params().values().begin());
  return out;
}

AblationKind ablation_from_name(std::string_view name) {
  if (name == "layernorm") return AblationKind::LayerNorm;
  if (name == "pool_order") return AblationKind::PoolOrder;
  if (name == "kernel_shape") return AblationKind::KernelShape;
  if (name == "channels") return AblationKind::Channels;
  if (name == "filter_layers") return AblationKind::FilterLayers;
  throw ConfigError("unknown ablation kind '" + std::string(name) + "'");
}

std::string ablation_name(AblationKind k) {
  switch (k) {
    case AblationKind::LayerNorm: return "layernorm";
    case AblationKind::PoolOrder: return "pool_order";
    case AblationKind::KernelShape: return "kernel_shape";
    case AblationKind::Channels: return "channels";
    case AblationKind::FilterLayers: return "filter_layers";
  }
  return "?";
}

std::vector<AblationVariant> ablation_variants(AblationKind kind, const ExperimentConfig& base) {
  if (kind != AblationKind::LayerNorm && branch_of(base.model.method) != BranchKind::Conv)
    throw ConfigError("ablation '" + ablation_name(kind) + "' needs a convolutional-branch method");
  if (kind != AblationKind::LayerNorm && base.model.filters.empty())
    throw ConfigError("ablation '" + ablation_name(kind) + "' needs at least one filter layer in the base config");
  std::vector<AblationVariant> out;
  auto add = [&](std::string name, auto&& edit) {
    AblationVariant v{std::move(name), base};
    edit(v.config.model);
    v.config.label = (base.label.empty() ? "" : base.label + " ") + ablation_name(kind) + "=" + v.name;
    out.push_back(std::move(v));
  };
  switch (kind) {
    case AblationKind::LayerNorm:
      add("without LayerNorm", [](ModelConfig& m) { m.layer_norm = false; });
      add("with LayerNorm", [](ModelConfig& m) { m.layer_norm = true; });
      break;
    case AblationKind::PoolOrder:
      for (auto order : {FilterOrder::PoolThenActivation, FilterOrder::ActivationThenPool})
        add(filter_order_name(order), [order](ModelConfig& m) {
          for (auto& f : m.filters) f.order = order;
        });
      break;
    case AblationKind::KernelShape:
      for (auto [kh, kw] : {std::pair{1, 2}, std::pair{2, 2}, std::pair{2, 4}})
        add("(" + std::to_string(kh) + "," + std::to_string(kw) + ")", [kh, kw](ModelConfig& m) {
          // Stride follows the kernel; the convolution has no padding.
          for (auto& f : m.filters) {
            f.kernel_h = f.stride_h = kh;
            f.kernel_w = f.stride_w = kw;
          }
        });
      break;
    case AblationKind::Channels:
      for (int c : {2, 4, 6})
        add(std::to_string(c), [c](ModelConfig& m) {
          for (auto& f : m.filters) f.channels = c;
        });
      break;
    case AblationKind::FilterLayers:
      for (int n : {1, 2})
        add(std::to_string(n), [n](ModelConfig& m) { m.filters.assign(static_cast<std::size_t>(n), m.filters.front()); });
      break;
  }
  return out;
}

void write_ablation_csv(std::ostream& out, AblationKind kind, const std::vector<AblationVariant>& variants,
                        const std::vector<ResultRow>& rows) {
  if (variants.size() != rows.size()) throw ShapeError("one result row per ablation variant is required");
  out << "kind,variant,method,rel_l2,param_count,wall_time_train_s,wall_time_infer_ms,config_hash\n"
      << std::setprecision(8);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << ablation_name(kind) << ',' << csv_field(variants[i].name) << ',' << rows[i].method << ','
        << rows[i].rel_l2_text() << ',' << rows[i].param_count << ',' << rows[i].wall_time_train_s << ','
        << rows[i].wall_time_infer_ms << ',' << hex(rows[i].config_hash) << '\n';
}

std::vector<ResultRow> run_ablation(AblationKind kind, const ExperimentConfig& base, const EpochCallback& on_epoch) {
  const auto variants = ablation_variants(kind, base);
  std::vector<ResultRow> rows;
  for (const auto& v : variants) rows.push_back(run_experiment(v.config, on_epoch));
  if (!base.output_dir.empty()) {
    fs::create_directories(base.output_dir);
    std::ofstream out(fs::path(base.output_dir) / ("ablation_" + ablation_name(kind) + ".csv"));
    write_ablation_csv(out, kind, variants, rows);
  }
  return rows;
}

TimingStats TimingStats::from_samples(std::vector<double> samples) {
  TimingStats s;
  s.reps = static_cast<int>(samples.size());
  if (samples.empty()) return s;
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean_ms = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean_ms) * (v - s.mean_ms);
    s.stddev_ms = std::sqrt(ss / static_cast<double>(samples.size() - 1));
  }
  s.samples_ms = std::move(samples);
  return s;
}

namespace {

template <typename F>
TimingStats time_reps(int reps, F&& body) {
  if (reps <= 0) return {};
  body();  // warm-up
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return TimingStats::from_samples(std::move(samples));
}

}  // namespace

TimingStats time_inference(const OperatorModel& model, const ProblemSpec& problem, const Eigen::VectorXd& a,
                           const EvalGrid& grid, int reps) {
  const Eigen::MatrixXd input = a;
  const Eigen::Matrix2Xd tx = grid.points();
  const FieldSet fields = model.fields();
  return time_reps(reps, [&] {
    const Eigen::MatrixXd rho = predict_density(fields, &model.params(), problem, input, tx);
    if (!rho.allFinite()) throw NumericError("non-finite prediction during timing");
  });
}

TimingStats time_reference(const ProblemSpec& problem, const KineticGrid& kgrid, const InputGrid& input_grid,
                           const Eigen::VectorXd& f0, const EvalGrid& grid, int reps) {
  return time_reps(reps, [&] { (void)solve_transport_ap(problem, kgrid, input_grid, f0, grid); });
}

}  // namespace apcon
