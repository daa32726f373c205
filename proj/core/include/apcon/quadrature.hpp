#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace apcon {

/// Gauss-Legendre rule on [-1, 1] with weights halved, so that
/// moment(q, f) = Σ w_k f(v_k) approximates ⟨f⟩ = ½∫ f dv.
/// Nodes are sorted ascending; node k mirrors node n-1-k.
class VelocityQuadrature {
 public:
  VelocityQuadrature() = default;
  VelocityQuadrature(std::vector<double> nodes, std::vector<double> weights);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  Eigen::VectorXd weights_vector() const;
  Eigen::VectorXd nodes_vector() const;
  std::size_t mirror(std::size_t k) const { return nodes_.size() - 1 - k; }
  /// True when v_k = -v_{n-1-k} and w_k = w_{n-1-k} exactly.
  bool symmetric() const;

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// n-point rule via Newton iteration on Legendre polynomials. n must be even and >= 2.
VelocityQuadrature gauss_legendre(int n);

/// Σ w_k f_k.
double moment(const VelocityQuadrature& q, std::span<const double> f_at_nodes);

/// L f = ⟨f⟩ − f evaluated at each node.
std::vector<double> collision(const VelocityQuadrature& q, std::span<const double> f_at_nodes);

/// (I − Π) f = f − ⟨f⟩ at each node.
std::vector<double> project_out_mean(const VelocityQuadrature& q, std::span<const double> f_at_nodes);

}  // namespace apcon
