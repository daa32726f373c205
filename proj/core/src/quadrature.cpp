#include "apcon/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "apcon/errors.hpp"

namespace apcon {

VelocityQuadrature::VelocityQuadrature(std::vector<double> nodes, std::vector<double> weights)
    : nodes_(std::move(nodes)), weights_(std::move(weights)) {
  if (nodes_.size() != weights_.size()) throw ShapeError("quadrature: nodes/weights length mismatch");
}

Eigen::VectorXd VelocityQuadrature::weights_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(weights_.data(), static_cast<Eigen::Index>(weights_.size()));
}

Eigen::VectorXd VelocityQuadrature::nodes_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(nodes_.data(), static_cast<Eigen::Index>(nodes_.size()));
}

bool VelocityQuadrature::symmetric() const {
  for (std::size_t k = 0; k < nodes_.size(); ++k)
    if (nodes_[k] != -nodes_[mirror(k)] || weights_[k] != weights_[mirror(k)]) return false;
  return true;
}

VelocityQuadrature gauss_legendre(int n) {
  if (n < 2 || n % 2 != 0)
    throw ConfigError("gauss_legendre: n must be even and >= 2 (got " + std::to_string(n) + ")");
  std::vector<double> nodes(n), weights(n);
  const int half = n / 2;
  for (int i = 0; i < half; ++i) {
    // Initial guess for the i-th positive root, refined by Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // Ascending order: negative nodes first.
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 0.5 * w;
  }
  // Fold the rounding residue of Σw = 1 symmetrically into the two central weights.
  double total = 0.0;
  for (int i = 0; i < half; ++i) total += weights[i];
  double drift = 0.5 - total;
  weights[half - 1] += drift;
  weights[half] += drift;
  return VelocityQuadrature(std::move(nodes), std::move(weights));
}

double moment(const VelocityQuadrature& q, std::span<const double> f) {
  if (f.size() != q.size())
    throw ShapeError("moment: expected " + std::to_string(q.size()) + " values, got " + std::to_string(f.size()));
  double acc = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) acc += q.weights()[k] * f[k];
  return acc;
}

std::vector<double> collision(const VelocityQuadrature& q, std::span<const double> f) {
  const double m = moment(q, f);
  std::vector<double> out(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = m - f[k];
  return out;
}

std::vector<double> project_out_mean(const VelocityQuadrature& q, std::span<const double> f) {
  const double m = moment(q, f);
  std::vector<double> out(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = f[k] - m;
  return out;
}

}  // namespace apcon
