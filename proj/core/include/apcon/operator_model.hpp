#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "apcon/fields.hpp"

namespace apcon {

/// The six methods compared: DON variants use a dense branch on the
/// flattened input, CON variants the convolutional branch.
enum class Method { Pidon, Picon, ApdonV1, ApconV1, ApdonV2, ApconV2 };

Method method_from_name(std::string_view name);
std::string method_name(Method m);
Formulation formulation_of(Method m);
BranchKind branch_of(Method m);
const std::vector<Method>& all_methods();

struct ModelConfig {
  Method method = Method::ApconV2;
  int height = 32;
  int width = 64;
  int hidden_width = 64;
  int p = 64;
  int branch_layers = 5;
  int trunk_layers = 4;
  ad::Activation activation = ad::Activation::Swish;
  /// Unset: on for CON variants, off for DON variants.
  std::optional<bool> layer_norm;
  std::vector<FilterLayerConfig> filters{FilterLayerConfig{}, FilterLayerConfig{}};
  int lift_width = 64;
  int quadrature_nodes = 32;

  bool use_layer_norm() const;
  DeepOnetConfig net_config(int query_dim) const;
};

class OperatorModel {
 public:
  explicit OperatorModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  Method method() const { return cfg_.method; }
  Formulation formulation() const { return formulation_of(cfg_.method); }

  ParameterVector& params() { return params_; }
  const ParameterVector& params() const { return params_; }
  const std::vector<DeepOnet>& nets() const { return nets_; }
  const std::vector<std::string>& net_names() const { return names_; }
  const VelocityQuadrature& quadrature() const { return quadrature_; }

  FieldSet fields() const;

  /// Fresh random weights (Glorot/zero/unit) from a seed.
  void initialize(std::uint64_t seed);

  std::size_t param_count() const { return params_.size(); }

 private:
  ModelConfig cfg_;
  ParameterVector params_;
  std::vector<DeepOnet> nets_;
  std::vector<std::string> names_;
  VelocityQuadrature quadrature_;
};

}  // namespace apcon
