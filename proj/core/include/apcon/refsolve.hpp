#pragma once

#include <functional>
#include <span>
#include <vector>

#include "apcon/data.hpp"
#include "apcon/density.hpp"
#include "apcon/physics.hpp"
#include "apcon/quadrature.hpp"

namespace apcon {

/// Uniform output grid: nt time points on [0, t_max] (both ends) and nx
/// points on [x_left, x_right] (both ends).
struct EvalGrid {
  std::vector<double> t;
  std::vector<double> x;

  static EvalGrid uniform(double t_max, int nt = 50, int nx = 32, double x_left = 0.0, double x_right = 1.0);
  Eigen::Matrix2Xd points() const;  // (t, x) columns, time-major
};

struct KineticGrid {
  int nx = 200;
  VelocityQuadrature quadrature = gauss_legendre(32);
  /// 0 selects safety · (εΔx/max|v| + Δx²/(2⟨v²⟩)).
  double dt = 0.0;
  double safety = 0.5;
};

/// Largest time step the micro-macro scheme is run with (before the safety factor).
double ap_stability_bound(double eps, double dx, const VelocityQuadrature& q);

/// f₀ sampled by bilinear interpolation of the grid data.
double interpolate_initial(const InputGrid& grid, const Eigen::VectorXd& values, double x, double v);

/// ⟨f₀(x, ·)⟩ over the quadrature at each x.
std::vector<double> initial_density(const InputGrid& grid, const Eigen::VectorXd& values,
                                    const VelocityQuadrature& q, std::span<const double> x);

/// Staggered micro-macro scheme: ρ at cell nodes, g at cell midpoints,
/// collision and the ε⁻² coupling implicit, transport of g upwinded and
/// explicit. Inflow/Dirichlet data enter through ghost values of g for
/// incoming velocities and through the boundary density
///   ρ_b = 2[Σ_{incoming} w f_b + ε Σ_{outgoing} w g_{adjacent}].
/// The result is linearly interpolated onto `out`. NumericError on blow-up.
DensityField solve_transport_ap(const ProblemSpec& problem, const KineticGrid& grid, const InputGrid& input_grid,
                                const Eigen::VectorXd& f0, const EvalGrid& out);

struct HeatGrid {
  int nx = 200;
  /// 0 selects nt = max(200, ceil(t_max / Δx)).
  int nt = 0;
  /// Leading backward-Euler half steps that damp incompatible corners.
  int startup_steps = 4;
};

/// ∂t ρ = k ∂xx ρ + Q with Dirichlet values, Crank–Nicolson in time and
/// central differences in space. rho0 holds nx + 1 node values on
/// [x_left, x_right]. Result interpolated onto `out`.
DensityField solve_heat_cn(double k, const std::function<double(double, double)>& q, std::span<const double> rho0,
                           double left_value, double right_value, double x_left, double x_right,
                           const HeatGrid& grid, const EvalGrid& out);

/// Diffusion-limit reference for a kinetic problem: k = ⟨v²⟩ = 1/3,
/// ρ₀ = ⟨f₀⟩, boundary densities equal to the boundary data.
DensityField diffusion_limit(const ProblemSpec& problem, const HeatGrid& grid, const InputGrid& input_grid,
                             const Eigen::VectorXd& f0, const EvalGrid& out,
                             const VelocityQuadrature& q = gauss_legendre(32));

/// sqrt(Σ|p − r|² / Σ|r|²); ShapeError on grid mismatch, DomainError if r ≡ 0.
double relative_l2(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference);
double relative_l2(const DensityField& predicted, const DensityField& reference);

/// Φ(t, x) = (4πkt)^{-1/2} exp(−x²/(4kt)); DomainError for t ≤ 0 or k ≤ 0.
double heat_kernel(double t, double x, double k);

/// u(x) = ∫ Φ(t, x − y) g(y) dy by adaptive Gauss–Kronrod after the
/// substitution y = x + √(4kt)·s. AccuracyError when the error estimate
/// stays above `tol`.
std::vector<double> heat_convolution(const std::function<double(double)>& g, double t, double k,
                                     std::span<const double> x_eval, double tol = 1e-10);

/// Poisson term plus ∫₀ᵗ ∫ Φ(t − s, x − y) f(s, y) dy ds.
std::vector<double> duhamel(const std::function<double(double)>& g, const std::function<double(double, double)>& f,
                            double t, double k, std::span<const double> x_eval, double tol = 1e-9);

}  // namespace apcon
