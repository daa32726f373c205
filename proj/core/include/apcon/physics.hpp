#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "apcon/fields.hpp"
#include "apcon/grid.hpp"

namespace apcon {

enum class ProblemId { I, II };
enum class BoundaryKind { Inflow, Dirichlet };
enum class Side { Left, Right };

ProblemId problem_from_name(std::string_view name);
std::string problem_name(ProblemId p);

/// ε ∂t f + v ∂x f = (1/ε)(⟨f⟩ − f) + εQ on (0, t_max) x (x_left, x_right) x (−1, 1).
struct ProblemSpec {
  ProblemId id = ProblemId::I;
  double eps = 1.0;
  double t_max = 0.5;
  double x_left = 0.0;
  double x_right = 1.0;
  BoundaryKind boundary = BoundaryKind::Inflow;
  /// Inflow: f(x_left, v>0) and f(x_right, v<0). Dirichlet: both sides, all v.
  double left_value = 1.0;
  double right_value = 0.5;
  /// Q(t, x); empty means Q ≡ 0.
  std::function<double(double, double)> source;

  void validate() const;
  double boundary_value(Side side) const { return side == Side::Left ? left_value : right_value; }
  double q(double t, double x) const { return source ? source(t, x) : 0.0; }

  /// Inflow 1 / ½. t_max 0.5 at ε = 1, otherwise 0.1.
  static ProblemSpec problem1(double eps);
  /// Zero Dirichlet, t_max 0.1.
  static ProblemSpec problem2(double eps);
  static ProblemSpec make(ProblemId id, double eps);
};

struct BoundaryPoint {
  double t = 0.0;
  double v = 0.0;
  Side side = Side::Left;
};

struct CollocationBatch {
  /// Rows (t, x, v); one column per interior point.
  Eigen::Matrix3Xd interior;
  std::vector<BoundaryPoint> boundary;
  /// Flat grid indices (h*W + w) of the initial-condition points.
  std::vector<Eigen::Index> initial;
};

/// Records every unknown and residual of one formulation on a tape, for a
/// batch of B input functions sharing the same query points. All returned
/// nodes are B x N.
class FieldEvaluator {
 public:
  /// `a` is (H*W) x B; encodings are recorded on `tape` unless supplied.
  FieldEvaluator(ad::Tape& tape, const FieldSet& fields, const ProblemSpec& problem, const Eigen::MatrixXd& a);
  FieldEvaluator(ad::Tape& tape, const FieldSet& fields, const ProblemSpec& problem,
                 std::vector<ad::Var> encodings, ad::Index batch);

  const std::vector<ad::Var>& encodings() const { return enc_; }
  ad::Index batch() const { return batch_; }

  struct Partials {
    ad::Var value, dt, dx;
  };
  /// Raw output of net k at coords (query_dim x N), with optional ∂t, ∂x.
  Partials raw(std::size_t k, const Eigen::MatrixXd& coords, bool want_t, bool want_x);

  /// Interior residual families at (t, x, v) columns:
  ///   PiDon: {ε²∂t f + εv∂x f − (⟨f⟩ − f)}
  ///   MicroMacro: {macro, micro}
  ///   EvenOdd: {even, odd, macro, constraint}
  std::vector<ad::Var> interior(const Eigen::Matrix3Xd& points);
  /// Reconstructed f at (t, x, v) columns.
  ad::Var reconstruct_f(const Eigen::Matrix3Xd& points);
  /// f − prescribed value at boundary points.
  ad::Var boundary(const std::vector<BoundaryPoint>& points);
  /// Predicted density at (t, x) columns.
  ad::Var density(const Eigen::Matrix2Xd& tx);

  /// ρ at (t, x) and g at every quadrature node, node-major per point: B x (N*Q).
  std::pair<ad::Var, ad::Var> micro_macro_at_nodes(const Eigen::Matrix2Xd& tx);
  /// ρ, r, j with r and j at every quadrature node: B x (N*Q).
  std::tuple<ad::Var, ad::Var, ad::Var> even_odd_at_nodes(const Eigen::Matrix2Xd& tx);
  /// f at every quadrature node for the PiDon formulation: B x (N*Q).
  ad::Var f_at_nodes(const Eigen::Matrix2Xd& tx);

 private:
  ad::Var wrap(ad::Var g);
  ad::Var zeros(ad::Index cols);
  ad::Var row_constant(const Eigen::RowVectorXd& row);
  ad::Var source(const Eigen::Matrix2Xd& tx);
  Eigen::Matrix3Xd node_coords(const Eigen::Matrix2Xd& tx) const;
  std::vector<ad::Index> mirror_indices(ad::Index n_points) const;
  /// Mean over nodes of net k at unique (t, x) pairs, gathered back to the points.
  ad::Var node_mean_at(std::size_t k, const Eigen::Matrix2Xd& tx);

  ad::Tape& tape_;
  const FieldSet& fields_;
  const ProblemSpec& problem_;
  std::vector<ad::Var> enc_;
  ad::Index batch_ = 0;
};

enum class Reduction { Sequential, Pairwise };

Reduction reduction_from_name(std::string_view name);
std::string reduction_name(Reduction r);
/// APCON_REDUCTION=sequential|pairwise overrides `fallback` when set.
Reduction reduction_from_env(Reduction fallback);

struct RiskOptions {
  /// Interior / boundary / initial points per tape.
  ad::Index chunk_points = 256;
  Reduction reduction = Reduction::Sequential;
  /// Worker threads for chunk evaluation; results are reduced in a fixed order.
  int threads = 1;
};

struct RiskTerms {
  /// One mean-square value per interior family (sample-averaged).
  std::vector<double> interior;
  double boundary = 0.0;
  double initial = 0.0;
  double total = 0.0;
};

struct RiskResult {
  RiskTerms terms;
  /// ∂R/∂θ, empty unless requested.
  std::vector<double> gradient;
};

/// Sample-averaged sum of per-family mean-square residuals with unit weights.
RiskResult evaluate_risk(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                         const InputGrid& grid, const Eigen::MatrixXd& a, const CollocationBatch& batch,
                         bool with_gradient, const RiskOptions& options = {});

double empirical_risk(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                      const InputGrid& grid, const Eigen::MatrixXd& a, const CollocationBatch& batch);

/// Predicted ρ(t, x) for every column of a ((H*W) x B) at the (t, x)
/// columns of `tx`; returns B x N. Points are processed in chunks.
Eigen::MatrixXd predict_density(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                                const Eigen::MatrixXd& a, const Eigen::Matrix2Xd& tx, ad::Index chunk_points = 256);

// Single-point views. `a` has H*W entries (may be empty for fields that ignore it).

double eval_f_pidon(const FieldSet& fields, const ParameterVector* params, std::span<const double> a, double t,
                    double x, double v);

struct MicroMacroValues {
  double rho = 0.0;
  std::vector<double> g;
};
MicroMacroValues eval_rho_g_v1(const FieldSet& fields, const ParameterVector* params, std::span<const double> a,
                               double t, double x);

struct EvenOddValues {
  double rho = 0.0;
  std::vector<double> r, j;
};
EvenOddValues eval_rho_r_j_v2(const FieldSet& fields, const ParameterVector* params, std::span<const double> a,
                              double t, double x);

double residual_pidon(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                      std::span<const double> a, double t, double x, double v);

struct MicroMacroResidual {
  double macro = 0.0, micro = 0.0;
};
MicroMacroResidual residual_v1(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                               std::span<const double> a, double t, double x, double v);

struct EvenOddResidual {
  double even = 0.0, odd = 0.0, macro = 0.0, constraint = 0.0;
};
EvenOddResidual residual_v2(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                            std::span<const double> a, double t, double x, double v);

double boundary_residual(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                         std::span<const double> a, double t, double v, Side side);

/// (x, v) must be a grid coordinate of `grid` (to 1e-12), else DomainError.
double initial_residual(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                        const InputGrid& grid, std::span<const double> a, double x, double v);

}  // namespace apcon
