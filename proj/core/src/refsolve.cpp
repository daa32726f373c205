#include "apcon/refsolve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "apcon/errors.hpp"

namespace apcon {

EvalGrid EvalGrid::uniform(double t_max, int nt, int nx, double x_left, double x_right) {
  return EvalGrid{linspace(0.0, t_max, nt), linspace(x_left, x_right, nx)};
}

Eigen::Matrix2Xd EvalGrid::points() const {
  Eigen::Matrix2Xd p(2, static_cast<Eigen::Index>(t.size() * x.size()));
  Eigen::Index c = 0;
  for (double ti : t)
    for (double xj : x) p.col(c++) << ti, xj;
  return p;
}

double ap_stability_bound(double eps, double dx, const VelocityQuadrature& q) {
  double vmax = 0.0, v2 = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    vmax = std::max(vmax, std::abs(q.nodes()[k]));
    v2 += q.weights()[k] * q.nodes()[k] * q.nodes()[k];
  }
  return eps * dx / vmax + dx * dx / (2.0 * v2);
}

namespace {

/// Index of the cell [a_i, a_{i+1}] of a uniform axis containing `x` and the
/// local coordinate in [0, 1].
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double x) {
  const double lo = axis.front(), hi = axis.back();
  const double h = (hi - lo) / static_cast<double>(axis.size() - 1);
  double s = (x - lo) / h;
  s = std::clamp(s, 0.0, static_cast<double>(axis.size() - 1));
  std::size_t i = std::min(static_cast<std::size_t>(s), axis.size() - 2);
  return {i, s - static_cast<double>(i)};
}

/// Linear interpolation of node values (uniform nodes on [lo, hi]) at x.
double interp_uniform(const std::vector<double>& values, double lo, double hi, double x) {
  const double h = (hi - lo) / static_cast<double>(values.size() - 1);
  double s = std::clamp((x - lo) / h, 0.0, static_cast<double>(values.size() - 1));
  std::size_t i = std::min(static_cast<std::size_t>(s), values.size() - 2);
  const double a = s - static_cast<double>(i);
  return (1.0 - a) * values[i] + a * values[i + 1];
}

/// Collects snapshots onto the evaluation grid while a solver marches in time.
class Sampler {
 public:
  Sampler(const EvalGrid& out, double x_left, double x_right)
      : out_(out), lo_(x_left), hi_(x_right), rho_(out.t.size(), out.x.size()) {}

  void first(const std::vector<double>& nodes) {
    while (next_ < out_.t.size() && out_.t[next_] <= 0.0) write(next_++, nodes, nodes, 0.0);
  }

  /// Called after advancing from t0 (values prev) to t1 (values cur).
  void advance(double t0, double t1, const std::vector<double>& prev, const std::vector<double>& cur, bool last) {
    while (next_ < out_.t.size() && (out_.t[next_] <= t1 || last)) {
      const double a = t1 > t0 ? std::clamp((out_.t[next_] - t0) / (t1 - t0), 0.0, 1.0) : 1.0;
      write(next_++, prev, cur, a);
    }
  }

  DensityField result() const { return DensityField{out_.t, out_.x, rho_, {}}; }

 private:
  void write(std::size_t i, const std::vector<double>& prev, const std::vector<double>& cur, double a) {
    for (std::size_t j = 0; j < out_.x.size(); ++j) {
      const double p = interp_uniform(prev, lo_, hi_, out_.x[j]);
      const double c = interp_uniform(cur, lo_, hi_, out_.x[j]);
      rho_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (1.0 - a) * p + a * c;
    }
  }

  const EvalGrid& out_;
  double lo_, hi_;
  Eigen::MatrixXd rho_;
  std::size_t next_ = 0;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

double interpolate_initial(const InputGrid& grid, const Eigen::VectorXd& values, double x, double v) {
  if (values.size() != grid.size()) throw ShapeError("initial data does not match its grid");
  auto [h, a] = locate(grid.x, x);
  auto [w, b] = locate(grid.v, v);
  const int width = grid.width();
  auto at = [&](std::size_t hh, std::size_t ww) { return values(static_cast<Eigen::Index>(hh * width + ww)); };
  return (1 - a) * (1 - b) * at(h, w) + (1 - a) * b * at(h, w + 1) + a * (1 - b) * at(h + 1, w) +
         a * b * at(h + 1, w + 1);
}

std::vector<double> initial_density(const InputGrid& grid, const Eigen::VectorXd& values,
                                    const VelocityQuadrature& q, std::span<const double> x) {
  std::vector<double> rho(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < q.size(); ++k) rho[i] += q.weights()[k] * interpolate_initial(grid, values, x[i], q.nodes()[k]);
  return rho;
}

DensityField solve_transport_ap(const ProblemSpec& problem, const KineticGrid& grid, const InputGrid& input_grid,
                                const Eigen::VectorXd& f0, const EvalGrid& out) {
  problem.validate();
  if (grid.nx < 2) throw ConfigError("kinetic grid needs at least 2 cells");
  const auto& q = grid.quadrature;
  const std::size_t nq = q.size();
  const int n = grid.nx;
  const double eps = problem.eps;
  const double dx = (problem.x_right - problem.x_left) / n;
  const double bound = ap_stability_bound(eps, dx, q);
  double dt = grid.dt > 0.0 ? grid.dt : grid.safety * bound;
  const long nt = std::max<long>(1, static_cast<long>(std::ceil(problem.t_max / dt - 1e-9)));
  dt = problem.t_max / static_cast<double>(nt);

  std::vector<double> xn(static_cast<std::size_t>(n + 1)), xm(static_cast<std::size_t>(n));
  for (int i = 0; i <= n; ++i) xn[static_cast<std::size_t>(i)] = problem.x_left + i * dx;
  for (int i = 0; i < n; ++i) xm[static_cast<std::size_t>(i)] = problem.x_left + (i + 0.5) * dx;

  const auto& v = q.nodes();
  const auto& w = q.weights();
  std::vector<double> rho = initial_density(input_grid, f0, q, xn);
  // g(i, k) at midpoint i, velocity k.
  Eigen::MatrixXd g(n, static_cast<Eigen::Index>(nq));
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    std::vector<double> fm(nq);
    for (std::size_t k = 0; k < nq; ++k) {
      fm[k] = interpolate_initial(input_grid, f0, xm[static_cast<std::size_t>(i)], v[k]);
      mean += w[k] * fm[k];
    }
    for (std::size_t k = 0; k < nq; ++k) g(i, static_cast<Eigen::Index>(k)) = (fm[k] - mean) / eps;
  }

  double w_in_left = 0.0, w_in_right = 0.0;
  for (std::size_t k = 0; k < nq; ++k) (v[k] > 0.0 ? w_in_left : w_in_right) += w[k];
  const double fl = problem.left_value, fr = problem.right_value;
  double scale = std::abs(fl) + std::abs(fr) + 1.0;
  for (double r : rho) scale = std::max(scale, std::abs(r));

  Sampler sampler(out, problem.x_left, problem.x_right);
  sampler.first(rho);

  Eigen::MatrixXd gnew(n, static_cast<Eigen::Index>(nq));
  std::vector<double> transport(nq), prev;
  const double relax = 1.0 / (1.0 + dt / (eps * eps));
  for (long step = 0; step < nt; ++step) {
    const double t = static_cast<double>(step) * dt;
    for (int i = 0; i < n; ++i) {
      double mean_t = 0.0;
      for (std::size_t k = 0; k < nq; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        double d;
        if (v[k] > 0.0) {
          const double left = i > 0 ? g(i - 1, kk) : (fl - rho[0]) / eps;
          d = g(i, kk) - left;
        } else {
          const double right = i < n - 1 ? g(i + 1, kk) : (fr - rho[static_cast<std::size_t>(n)]) / eps;
          d = right - g(i, kk);
        }
        transport[k] = v[k] * d / dx;
        mean_t += w[k] * transport[k];
      }
      const double drho = (rho[static_cast<std::size_t>(i + 1)] - rho[static_cast<std::size_t>(i)]) / dx;
      for (std::size_t k = 0; k < nq; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        gnew(i, kk) = (g(i, kk) - dt / eps * (transport[k] - mean_t) - dt / (eps * eps) * v[k] * drho) * relax;
      }
    }
    g.swap(gnew);

    prev = rho;
    for (int i = 1; i < n; ++i) {
      double flux = 0.0;
      for (std::size_t k = 0; k < nq; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        flux += w[k] * v[k] * (g(i, kk) - g(i - 1, kk));
      }
      rho[static_cast<std::size_t>(i)] = prev[static_cast<std::size_t>(i)] - dt * flux / dx + dt * problem.q(t, xn[static_cast<std::size_t>(i)]);
    }
    double out_left = 0.0, out_right = 0.0;
    for (std::size_t k = 0; k < nq; ++k) {
      if (v[k] < 0.0) out_left += w[k] * g(0, static_cast<Eigen::Index>(k));
      if (v[k] > 0.0) out_right += w[k] * g(n - 1, static_cast<Eigen::Index>(k));
    }
    rho[0] = (w_in_left * fl + eps * out_left) / (1.0 - w_in_right);
    rho[static_cast<std::size_t>(n)] = (w_in_right * fr + eps * out_right) / (1.0 - w_in_left);

    for (double r : rho)
      if (!std::isfinite(r) || std::abs(r) > 1e3 * scale)
        throw NumericError("transport scheme blew up at t=" + fmt(t + dt) + " with dt=" + fmt(dt) +
                           "; stability bound is eps*dx/max|v| + dx^2/(2<v^2>) = " + fmt(bound));
    sampler.advance(t, t + dt, prev, rho, step + 1 == nt);
  }

  DensityField f = sampler.result();
  f.metadata = {{"solver", "micro-macro-ap"}, {"eps", fmt(eps)},      {"nx", std::to_string(n)},
                {"nv", std::to_string(nq)},   {"dt", fmt(dt)},         {"nt", std::to_string(nt)},
                {"dt_bound", fmt(bound)}};
  return f;
}

DensityField solve_heat_cn(double k, const std::function<double(double, double)>& q, std::span<const double> rho0,
                           double left_value, double right_value, double x_left, double x_right,
                           const HeatGrid& grid, const EvalGrid& out) {
  if (!(k > 0.0)) throw ConfigError("diffusion coefficient must be positive");
  const int n = grid.nx;
  if (n < 2) throw ConfigError("heat grid needs at least 2 cells");
  if (rho0.size() != static_cast<std::size_t>(n + 1)) throw ShapeError("rho0 must have nx + 1 node values");
  const double t_max = out.t.empty() ? 0.0 : out.t.back();
  const double dx = (x_right - x_left) / n;
  long nt = grid.nt > 0 ? grid.nt : std::max<long>(200, static_cast<long>(std::ceil(t_max / dx)));
  const int startup = std::max(0, grid.startup_steps);
  nt = std::max<long>(nt, (startup + 1) / 2 + 1);
  const double dt = t_max > 0.0 ? t_max / static_cast<double>(nt) : 0.0;

  std::vector<double> x(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) x[static_cast<std::size_t>(i)] = x_left + i * dx;
  std::vector<double> rho(rho0.begin(), rho0.end()), prev;
  Sampler sampler(out, x_left, x_right);
  sampler.first(rho);
  if (t_max <= 0.0) return sampler.result();

  const std::size_t m = static_cast<std::size_t>(n - 1);
  std::vector<double> rhs(m), cprime(m), dprime(m);
  // Solves  -a u_{i-1} + b u_i - a u_{i+1} = rhs_i  with Dirichlet ends folded into rhs.
  auto thomas = [&](double a, double b) {
    cprime[0] = -a / b;
    dprime[0] = rhs[0] / b;
    for (std::size_t i = 1; i < m; ++i) {
      const double denom = b + a * cprime[i - 1];
      if (denom == 0.0) throw NumericError("singular tridiagonal system");
      cprime[i] = -a / denom;
      dprime[i] = (rhs[i] + a * dprime[i - 1]) / denom;
    }
    for (std::size_t i = m; i-- > 0;) rho[i + 1] = dprime[i] - (i + 1 < m ? cprime[i] * rho[i + 2] : 0.0);
  };
  auto src = [&](double t, std::size_t i) { return q ? q(t, x[i]) : 0.0; };

  double t = 0.0;
  auto finish_step = [&](double t0, double t1, bool last) {
    rho[0] = left_value;
    rho[static_cast<std::size_t>(n)] = right_value;
    sampler.advance(t0, t1, prev, rho, last);
  };
  // Backward-Euler half steps first, then Crank-Nicolson.
  for (int s = 0; s < startup; ++s) {
    const double h = 0.5 * dt, r = k * h / (dx * dx);
    prev = rho;
    for (std::size_t i = 1; i <= m; ++i) rhs[i - 1] = prev[i] + h * src(t + h, i);
    rhs[0] += r * left_value;
    rhs[m - 1] += r * right_value;
    thomas(r, 1.0 + 2.0 * r);
    finish_step(t, t + h, false);
    t += h;
  }
  const long cn_steps = nt - (startup + 1) / 2;
  const double h = (t_max - t) / static_cast<double>(cn_steps);
  const double r = k * h / (dx * dx);
  for (long s = 0; s < cn_steps; ++s) {
    prev = rho;
    const double tn = t;
    const double t1 = s + 1 == cn_steps ? t_max : t + h;
    for (std::size_t i = 1; i <= m; ++i) {
      const double lap = prev[i - 1] - 2.0 * prev[i] + prev[i + 1];
      rhs[i - 1] = prev[i] + 0.5 * r * lap + h * src(tn + 0.5 * h, i);
    }
    // Boundary neighbours at the new level.
    rhs[0] += 0.5 * r * left_value;
    rhs[m - 1] += 0.5 * r * right_value;
    thomas(0.5 * r, 1.0 + r);
    finish_step(tn, t1, s + 1 == cn_steps);
    t = t1;
  }
  DensityField f = sampler.result();
  std::ostringstream dts;
  dts.precision(17);
  dts << dt;
  f.metadata = {{"solver", "crank-nicolson"}, {"nx", std::to_string(n)}, {"nt", std::to_string(nt)},
                {"dt", dts.str()}, {"startup_steps", std::to_string(startup)}};
  return f;
}

DensityField diffusion_limit(const ProblemSpec& problem, const HeatGrid& grid, const InputGrid& input_grid,
                             const Eigen::VectorXd& f0, const EvalGrid& out, const VelocityQuadrature& q) {
  problem.validate();
  std::vector<double> x = linspace(problem.x_left, problem.x_right, grid.nx + 1);
  std::vector<double> rho0 = initial_density(input_grid, f0, q, x);
  double k = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) k += q.weights()[i] * q.nodes()[i] * q.nodes()[i];
  return solve_heat_cn(k, problem.source, rho0, problem.left_value, problem.right_value, problem.x_left,
                       problem.x_right, grid, out);
}

double relative_l2(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& reference) {
  if (predicted.rows() != reference.rows() || predicted.cols() != reference.cols())
    throw ShapeError("relative_l2: fields have different shapes");
  const double den = reference.squaredNorm();
  if (den == 0.0) throw DomainError("relative_l2 is undefined for an identically zero reference");
  return std::sqrt((predicted - reference).squaredNorm() / den);
}

double relative_l2(const DensityField& predicted, const DensityField& reference) {
  if (!predicted.same_grid(reference)) throw ShapeError("relative_l2: fields live on different grids");
  return relative_l2(predicted.rho, reference.rho);
}

}  // namespace apcon
