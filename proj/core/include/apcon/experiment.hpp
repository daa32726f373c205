#pragma once

// End-to-end experiment runs: data, reference solves, best-of-trials
// training, evaluation and result/artifact emission.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "apcon/data.hpp"
#include "apcon/operator_model.hpp"
#include "apcon/refsolve.hpp"
#include "apcon/train.hpp"

namespace apcon {

struct ExperimentConfig {
  ProblemId problem = ProblemId::I;
  double eps = 1.0;
  ModelConfig model;
  TrainConfig train;
  int trials = 1;

  // Dataset recipe, used when dataset_path is empty or does not exist yet.
  std::size_t m = 1024;
  double l = 0.5;
  std::uint64_t data_seed = 0;

  int nt_eval = 50;
  int nx_eval = 32;
  KineticGrid reference;

  std::string dataset_path;  // loaded if present, written after generation otherwise
  std::string output_dir;    // per-run artifacts; empty disables them
  std::string results_csv;   // appended to; empty disables it
  std::string label;         // free-form tag for the results row

  void validate() const;
  ProblemSpec problem_spec() const { return ProblemSpec::make(problem, eps); }
  EvalGrid eval_grid() const;
  InputGrid input_grid() const;
};

/// End-of-training error above which a run counts as not converged.
inline constexpr double kDivergenceThreshold = 0.5;

struct ResultRow {
  std::string label;
  std::string method;
  std::string problem;
  double eps = 0.0;
  double rel_l2 = 0.0;  // best test error of the selected trial
  bool diverged = false;
  bool failed = false;
  std::string message;
  std::size_t param_count = 0;
  double wall_time_train_s = 0.0;
  double wall_time_infer_ms = 0.0;
  int trials = 0;
  std::uint64_t config_hash = 0;

  /// "diverged" / "failed" in place of the number when applicable.
  std::string rel_l2_text() const;
};

std::string results_header();
std::string results_line(const ResultRow& row);
/// Appends one row under an exclusive file lock, writing the header first
/// when the file is new or empty.
void append_result(const std::string& path, const ResultRow& row);

/// Diverged when the loss went non-finite or the end-of-training error
/// exceeds kDivergenceThreshold.
bool is_diverged(const FitResult& fit);

/// Loads or generates the dataset described by `cfg`.
Dataset prepare_dataset(const ExperimentConfig& cfg);
/// Reference ρ for every test sample on the evaluation grid.
std::vector<DensityField> reference_fields(const ExperimentConfig& cfg, const Dataset& data);

/// Never throws for stage failures: the row is marked failed and whatever
/// artifacts were written stay on disk.
ResultRow run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {});

struct LoadedModel {
  ExperimentConfig config;
  std::unique_ptr<OperatorModel> model;
};
/// Rebuilds the model stored in a checkpoint from its embedded configuration.
/// ConfigError when the parameter layout does not match that configuration.
LoadedModel load_model(const std::string& checkpoint_path);

enum class AblationKind { LayerNorm, PoolOrder, KernelShape, Channels, FilterLayers };
AblationKind ablation_from_name(std::string_view name);
std::string ablation_name(AblationKind k);

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
};
std::vector<AblationVariant> ablation_variants(AblationKind kind, const ExperimentConfig& base);

/// Runs every variant and writes <output_dir>/ablation_<kind>.csv when an
/// output directory is configured.
std::vector<ResultRow> run_ablation(AblationKind kind, const ExperimentConfig& base,
                                   const EpochCallback& on_epoch = {});
void write_ablation_csv(std::ostream& out, AblationKind kind, const std::vector<AblationVariant>& variants,
                        const std::vector<ResultRow>& rows);

struct TimingStats {
  int reps = 0;
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  std::vector<double> samples_ms;

  bool empty() const { return reps == 0; }
  static TimingStats from_samples(std::vector<double> samples_ms);
};

/// Wall time of predicting ρ on the evaluation grid for one input function.
TimingStats time_inference(const OperatorModel& model, const ProblemSpec& problem, const Eigen::VectorXd& a,
                           const EvalGrid& grid, int reps);
/// Wall time of one reference solve for one input function.
TimingStats time_reference(const ProblemSpec& problem, const KineticGrid& kgrid, const InputGrid& input_grid,
                           const Eigen::VectorXd& f0, const EvalGrid& grid, int reps);

}  // namespace apcon
