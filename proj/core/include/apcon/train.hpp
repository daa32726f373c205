#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "apcon/data.hpp"
#include "apcon/density.hpp"
#include "apcon/operator_model.hpp"
#include "apcon/physics.hpp"
#include "apcon/refsolve.hpp"

namespace apcon {

struct TrainConfig {
  int epochs = 5000;
  double lr0 = 1e-4;
  double decay = 0.96;
  int decay_every = 100;
  int batch = 4;
  int n_int = 1024;
  int n_bdy = 256;
  /// Initial-condition points per iteration; 0 uses every grid coordinate.
  int n_init = 0;
  /// Interior points come in groups of this many velocities sharing one
  /// (t, x), boundary points in groups sharing one (t, side). Velocity
  /// moments are then evaluated once per group.
  int velocities_per_point = 1;
  std::uint64_t seed = 0;
  /// Test error cadence in epochs (the last epoch is always evaluated).
  int eval_every = 100;
  int checkpoint_every = 100;
  /// Directory for periodic and best checkpoints; empty disables writing.
  std::string checkpoint_dir;
  RiskOptions risk;

  void validate() const;
};

/// lr0 · decay^⌊epoch / decay_every⌋.
double lr_at(const TrainConfig& cfg, int epoch);

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update in place. NumericError names the first segment
/// with a non-finite gradient entry.
void adam_step(AdamState& state, ParameterVector& params, std::span<const double> gradient, double lr);

/// Interior points uniform in the open box, boundary points split evenly
/// between the two sides (inflow sign convention), initial points drawn
/// without replacement from the input grid (sorted by flat index). With
/// group > 1, consecutive points share (t, x) or (t, side).
CollocationBatch sample_collocation(const ProblemSpec& problem, int n_int, int n_bdy, int n_init,
                                    const InputGrid& grid, std::mt19937_64& rng, int group = 1);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  RiskTerms terms;
  double lr = 0.0;
  std::optional<double> test_error;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::optional<double> best_test_error;
  // Error of the parameters reached at the last epoch, before the best ones are restored.
  std::optional<double> final_test_error;
  int best_epoch = -1;
  bool diverged = false;
  std::string divergence_reason;
  double seconds = 0.0;
};

/// Optional per-epoch observer.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean over test samples of the relative ℓ² error of the predicted density.
double mean_test_error(const OperatorModel& model, const ProblemSpec& problem, const Eigen::MatrixXd& test_a,
                       const std::vector<DensityField>& references, const EvalGrid& grid);

/// Optimises `model` in place. When references are given the parameters with
/// the lowest test error are restored at the end; otherwise the final
/// parameters are kept. A non-finite loss stops training and restores the
/// last good parameters.
FitResult fit(OperatorModel& model, const Dataset& data, const ProblemSpec& problem, const TrainConfig& cfg,
              const std::vector<DensityField>* test_references = nullptr, const EvalGrid* eval_grid = nullptr,
              const std::string& config_text = {}, const EpochCallback& on_epoch = {});

/// Training state on disk.
///
/// Binary layout (little-endian): magic "APCNCK01", u32 version = 1,
/// u64 config hash, string config (u32 length + bytes), i64 epoch,
/// ParameterVector container, i64 adam step, f64 beta1, f64 beta2, f64 eps,
/// u64 n, n doubles m, n doubles v.
struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::int64_t epoch = 0;
  ParameterVector params;
  AdamState adam;

  void save(std::ostream& out) const;
  static Checkpoint load(std::istream& in);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

std::uint64_t text_hash(const std::string& text);

/// Writes the history as CSV: epoch,loss,interior,boundary,initial,lr,test_error,seconds.
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace apcon
