#pragma once

#include <random>
#include <span>
#include <string>

#include "apcon/conv_branch.hpp"
#include "apcon/modified_mlp.hpp"

namespace apcon {

enum class BranchKind { Dense, Conv };

struct DeepOnetConfig {
  BranchKind branch_kind = BranchKind::Conv;
  /// Used when branch_kind == Dense; input_dim must be H*W.
  ModifiedMlpConfig dense_branch{.input_dim = 32 * 64, .width = 64, .hidden_layers = 5, .output_dim = 64,
                                 .activation = ad::Activation::Swish, .layer_norm = false};
  ConvBranchConfig conv_branch;
  ModifiedMlpConfig trunk{.input_dim = 3, .width = 64, .hidden_layers = 4, .output_dim = 64,
                          .activation = ad::Activation::Swish, .layer_norm = true};

  int input_height() const;
  int input_width() const;
  int branch_output() const;
  /// Throws ShapeError when branch and trunk widths differ.
  void validate() const;
};

/// Anything that maps encoded input functions and query coordinates to a
/// B x N field of raw outputs. DeepOnet is the trained implementation; tests
/// plug in closed-form fields through the same interface.
class FieldNet {
 public:
  virtual ~FieldNet() = default;
  virtual int query_dim() const = 0;
  /// a: (H*W) x B. May return an invalid Var when the field ignores a.
  virtual ad::Var encode(ad::Tape& tape, ad::Var a) const = 0;
  /// coords: query_dim x N jet. Returns a B x N jet, B = columns of `encoded`
  /// (or `batch` when encoded is invalid).
  virtual ad::Jet evaluate(ad::Tape& tape, ad::Var encoded, const ad::Jet& coords, ad::Index batch) const = 0;
};

/// G(a)(y) = Σ_j b_j(a) t_j(y) + b0.
class DeepOnet : public FieldNet {
 public:
  DeepOnet() = default;
  DeepOnet(const DeepOnetConfig& cfg, ParameterVector& params, const std::string& prefix);

  const DeepOnetConfig& config() const { return cfg_; }
  int p() const { return cfg_.trunk.output_dim; }
  int trunk_input_dim() const { return cfg_.trunk.input_dim; }

  int query_dim() const override { return cfg_.trunk.input_dim; }
  /// a: (H*W) x B. Returns p x B.
  ad::Var encode(ad::Tape& tape, ad::Var a) const override;
  ad::Jet evaluate(ad::Tape& tape, ad::Var encoded, const ad::Jet& coords, ad::Index batch) const override;
  /// y: trunk_input_dim x N. Returns p x N.
  ad::Jet trunk(ad::Tape& tape, const ad::Jet& y) const;
  /// B x N outputs from p x B encodings and a p x N trunk jet.
  ad::Jet combine(ad::Tape& tape, ad::Var encoded, const ad::Jet& trunk_out) const;

  void initialize(ParameterVector& params, std::mt19937_64& rng) const;

  std::size_t b0_segment() const { return b0_; }
  const ModifiedMlp& trunk_net() const { return trunk_; }
  const ConvBranch* conv_branch() const { return cfg_.branch_kind == BranchKind::Conv ? &conv_ : nullptr; }
  const ModifiedMlp* dense_branch() const { return cfg_.branch_kind == BranchKind::Dense ? &dense_ : nullptr; }

 private:
  DeepOnetConfig cfg_;
  ConvBranch conv_;
  ModifiedMlp dense_;
  ModifiedMlp trunk_;
  std::size_t b0_ = 0;
};

/// Network output for one input function and one query point.
double deeponet_eval(const DeepOnet& net, const ParameterVector& params, std::span<const double> a,
                     std::span<const double> y);

/// Combiner alone: branch · trunk + b0.
double deeponet_eval(std::span<const double> branch_out, std::span<const double> trunk_out, double b0);

/// Numerically stable softplus.
double positive_wrap(double u);

/// Number of scalar parameters.
std::size_t param_count(const ParameterVector& params);

}  // namespace apcon
