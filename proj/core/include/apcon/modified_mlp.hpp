#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "apcon/jet.hpp"
#include "apcon/parameter_vector.hpp"

namespace apcon {

inline constexpr double kLayerNormEps = 1e-6;

struct ModifiedMlpConfig {
  int input_dim = 3;
  int width = 64;
  int hidden_layers = 4;
  int output_dim = 64;
  ad::Activation activation = ad::Activation::Swish;
  bool layer_norm = false;

  void validate() const;
};

/// Modified MLP with two input encoders U, V and gated hidden updates
///   U = σ(W_u x + b_u), V = σ(W_v x + b_v), H₁ = σ(W_h x + b_h)
///   Z_l = σ(LN(W_l H_l + b_l)),  H_{l+1} = (1 − Z_l) ⊙ U + Z_l ⊙ V,  l = 1..L−1
///   y = W_o H_L + b_o
/// LN is the identity when layer_norm is off.
class ModifiedMlp {
 public:
  ModifiedMlp() = default;
  /// Registers this network's segments in `params` under `prefix`.
  ModifiedMlp(const ModifiedMlpConfig& cfg, ParameterVector& params, const std::string& prefix);

  const ModifiedMlpConfig& config() const { return cfg_; }

  /// x: input_dim x N jet -> output_dim x N jet.
  ad::Jet forward(ad::Tape& tape, const ad::Jet& x) const;

  /// Glorot-uniform weights, zero biases, unit layer-norm gains.
  void initialize(ParameterVector& params, std::mt19937_64& rng) const;

  /// Segment indices in registration order.
  std::vector<std::size_t> segments() const;

  struct Affine {
    std::size_t weight = 0, bias = 0;
  };
  struct Gate {
    Affine affine;
    std::size_t ln_gain = 0, ln_bias = 0;
  };

 private:
  ModifiedMlpConfig cfg_;
  Affine enc_u_, enc_v_, enc_h_, out_;
  std::vector<Gate> gates_;
};

/// (v − mean) / sqrt(var + eps) ⊙ gain + bias over the feature dimension.
std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias, double eps = kLayerNormEps);

/// Evaluates a modified MLP at a single input vector.
std::vector<double> modified_mlp_forward(const ModifiedMlp& net, const ParameterVector& params,
                                         std::span<const double> x);

void glorot_uniform(Eigen::Map<Eigen::MatrixXd> w, double fan_in, double fan_out, std::mt19937_64& rng);

}  // namespace apcon
