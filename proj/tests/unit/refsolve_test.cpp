#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "apcon/errors.hpp"
#include "apcon/refsolve.hpp"

using namespace apcon;

namespace {

Eigen::VectorXd sample_on(const InputGrid& g, const std::function<double(double, double)>& f) {
  Eigen::VectorXd out(g.size());
  for (int i = 0; i < g.size(); ++i) out(i) = f(g.x_at(i), g.v_at(i));
  return out;
}

// Explicit upwind discrete-ordinates solver for ε = 1, node-based.
std::vector<double> upwind_density(const ProblemSpec& p, int n, const VelocityQuadrature& q,
                                   const std::function<double(double, double)>& f0) {
  const double dx = 1.0 / n;
  const long steps = static_cast<long>(std::ceil(p.t_max / (0.4 * dx)));
  const double dt = p.t_max / steps;
  const std::size_t nq = q.size();
  std::vector<std::vector<double>> f(nq, std::vector<double>(n + 1));
  for (std::size_t k = 0; k < nq; ++k)
    for (int i = 0; i <= n; ++i) f[k][i] = f0(i * dx, q.nodes()[k]);
  std::vector<double> rho(n + 1);
  auto density = [&] {
    for (int i = 0; i <= n; ++i) {
      rho[i] = 0;
      for (std::size_t k = 0; k < nq; ++k) rho[i] += q.weights()[k] * f[k][i];
    }
  };
  for (long s = 0; s < steps; ++s) {
    density();
    auto next = f;
    for (std::size_t k = 0; k < nq; ++k) {
      const double v = q.nodes()[k];
      for (int i = 0; i <= n; ++i) {
        double d;
        if (v > 0)
          d = i == 0 ? 0.0 : (f[k][i] - f[k][i - 1]) / dx;
        else
          d = i == n ? 0.0 : (f[k][i + 1] - f[k][i]) / dx;
        next[k][i] = f[k][i] + dt * (-v * d + rho[i] - f[k][i]);
      }
      if (v > 0) next[k][0] = p.left_value;
      if (v < 0) next[k][n] = p.right_value;
    }
    f.swap(next);
  }
  density();
  return rho;
}

}  // namespace

TEST(RelativeL2, WorkedExamples) {
  Eigen::MatrixXd r(2, 2);
  r << 3, 0, 0, 4;
  EXPECT_NEAR(relative_l2(1.1 * r, r), 0.1, 1e-15);
  Eigen::MatrixXd p = r;
  p(0, 1) = 5;  // error norm 5, reference norm 5
  EXPECT_DOUBLE_EQ(relative_l2(p, r), 1.0);
  EXPECT_THROW(relative_l2(Eigen::MatrixXd::Ones(2, 3), r), ShapeError);
  EXPECT_THROW(relative_l2(r, Eigen::MatrixXd::Zero(2, 2)), DomainError);
}

TEST(Interpolation, BilinearDataIsReproduced) {
  const InputGrid g = InputGrid::uniform(5, 7);
  auto f = [](double x, double v) { return 0.3 + 2 * x - v + 0.7 * x * v; };
  const Eigen::VectorXd vals = sample_on(g, f);
  for (double x : {0.0, 0.11, 0.5, 0.93, 1.0})
    for (double v : {-1.0, -0.42, 0.05, 0.77, 1.0}) EXPECT_NEAR(interpolate_initial(g, vals, x, v), f(x, v), 1e-14);
}

TEST(Interpolation, InitialDensityIsVelocityMoment) {
  const InputGrid g = InputGrid::uniform(5, 9);
  // ⟨2 − x + x v⟩ = 2 − x
  const Eigen::VectorXd vals = sample_on(g, [](double x, double v) { return 2 - x + x * v; });
  const std::vector<double> xs{0.0, 0.3, 1.0};
  const auto rho = initial_density(g, vals, gauss_legendre(8), xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(rho[i], 2 - xs[i], 1e-14);
}

TEST(StabilityBound, Formula) {
  const auto q = gauss_legendre(2);
  const double dx = 0.01, eps = 0.1;
  EXPECT_NEAR(ap_stability_bound(eps, dx, q), eps * dx * std::sqrt(3.0) + dx * dx * 1.5, 1e-16);
}

TEST(HeatCn, SeparationOfVariablesMode) {
  const int n = 200;
  std::vector<double> rho0(n + 1);
  for (int i = 0; i <= n; ++i) rho0[i] = std::sin(M_PI * i / n);
  const EvalGrid out = EvalGrid::uniform(0.1, 11, 21);
  const auto field = solve_heat_cn(1.0 / 3.0, {}, rho0, 0.0, 0.0, 0.0, 1.0, {.nx = n}, out);
  ASSERT_EQ(field.rho.rows(), 11);
  ASSERT_EQ(field.rho.cols(), 21);
  // peak at t = 0.1 is exp(−π² k t) = exp(−π²/30) ≈ 0.7196
  EXPECT_NEAR(field.rho(10, 10), std::exp(-M_PI * M_PI / 30.0), 2e-4);
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 21; ++j)
      EXPECT_NEAR(field.rho(i, j), std::exp(-M_PI * M_PI * out.t[i] / 3.0) * std::sin(M_PI * out.x[j]), 5e-4);
}

TEST(HeatCn, LinearSteadyStateWithSource) {
  // ρ = 1 + x − x² is stationary under Q = 2k with unit Dirichlet data.
  const int n = 100;
  const double k = 1.0 / 3.0;
  std::vector<double> rho0(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double x = double(i) / n;
    rho0[i] = -x * x + x + 1;
  }
  const auto field = solve_heat_cn(k, [&](double, double) { return 2 * k; }, rho0, 1.0, 1.0, 0.0, 1.0, {.nx = n},
                                   EvalGrid::uniform(0.1, 3, 11));
  for (int j = 0; j < 11; ++j) {
    const double x = field.x_grid[j];
    EXPECT_NEAR(field.rho(2, j), -x * x + x + 1, 1e-12);
  }
}

TEST(HeatCn, BadInputs) {
  std::vector<double> rho0(5, 0.0);
  EXPECT_THROW(solve_heat_cn(0.0, {}, rho0, 0, 0, 0, 1, {.nx = 4}, EvalGrid::uniform(0.1)), ConfigError);
  EXPECT_THROW(solve_heat_cn(1.0, {}, rho0, 0, 0, 0, 1, {.nx = 8}, EvalGrid::uniform(0.1)), ShapeError);
}

TEST(Transport, ConstantStateIsPreserved) {
  for (double eps : {1.0, 1e-2, 1e-4}) {
    ProblemSpec p = ProblemSpec::problem1(eps);
    p.left_value = p.right_value = 1.0;
    const InputGrid g = InputGrid::uniform(8, 16);
    const Eigen::VectorXd f0 = Eigen::VectorXd::Ones(g.size());
    const auto field = solve_transport_ap(p, {.nx = 50, .quadrature = gauss_legendre(8)}, g, f0,
                                          EvalGrid::uniform(p.t_max, 5, 9));
    EXPECT_LT((field.rho.array() - 1.0).abs().maxCoeff(), 1e-12) << "eps " << eps;
  }
}

TEST(Transport, KineticRegimeMatchesUpwindOrdinates) {
  const ProblemSpec p = ProblemSpec::problem1(1.0);
  auto f0 = [](double x, double) { return 1.0 - 0.5 * x; };
  const InputGrid g = InputGrid::uniform(32, 64);
  const auto q = gauss_legendre(16);
  const EvalGrid out = EvalGrid::uniform(p.t_max, 2, 33);
  const auto ap = solve_transport_ap(p, {.nx = 400, .quadrature = q}, g, sample_on(g, f0), out);
  const int n = 800;
  const auto rho = upwind_density(p, n, q, f0);
  Eigen::MatrixXd want(1, 33), got(1, 33);
  for (int j = 0; j < 33; ++j) {
    want(0, j) = rho[j * n / 32];
    got(0, j) = ap.rho(1, j);
  }
  EXPECT_LT(relative_l2(got, want), 5e-3);
}

TEST(Transport, DiffusiveRegimeApproachesHeatLimit) {
  const ProblemSpec p = ProblemSpec::problem1(1e-4);
  const InputGrid g = InputGrid::uniform(32, 64);
  const Eigen::VectorXd f0 = sample_on(g, [](double x, double v) { return problem1_initial_value(x, v, 0.4); });
  const EvalGrid out = EvalGrid::uniform(p.t_max, 11, 17);
  const auto ap = solve_transport_ap(p, {.nx = 100}, g, f0, out);
  const auto heat = diffusion_limit(p, {.nx = 100}, g, f0, out);
  EXPECT_LT(relative_l2(ap, heat), 1e-3);
}

TEST(Transport, UnstableStepIsNumericError) {
  const ProblemSpec p = ProblemSpec::problem1(1.0);
  const InputGrid g = InputGrid::uniform(8, 16);
  const Eigen::VectorXd f0 = Eigen::VectorXd::Ones(g.size());
  EXPECT_THROW(solve_transport_ap(p, {.nx = 100, .quadrature = gauss_legendre(8), .dt = 0.05}, g, f0,
                                  EvalGrid::uniform(p.t_max)),
               NumericError);
}

TEST(DensityField, RoundTripAndCsv) {
  DensityField d;
  d.t_grid = {0.0, 0.5};
  d.x_grid = {0.0, 0.5, 1.0};
  d.rho.resize(2, 3);
  d.rho << 1, 2, 3, 4, 5, 6;
  d.metadata = {{"solver", "test"}};
  std::stringstream s;
  d.save(s);
  EXPECT_EQ(DensityField::load(s), d);
  std::ostringstream csv;
  d.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, 9), "t,x,rho\n0");
  EvalGrid e = EvalGrid::uniform(0.5, 2, 3);
  EXPECT_EQ(e.points().cols(), 6);
  EXPECT_EQ(e.points()(1, 4), 0.5);
}
