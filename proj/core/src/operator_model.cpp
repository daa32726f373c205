#include "apcon/operator_model.hpp"

#include <algorithm>
#include <cctype>
#include <random>

#include "apcon/errors.hpp"

namespace apcon {

std::size_t expected_net_count(Formulation f) {
  switch (f) {
    case Formulation::PiDon: return 1;
    case Formulation::MicroMacro: return 2;
    case Formulation::EvenOdd: return 3;
  }
  return 0;
}

void FieldSet::validate() const {
  if (nets.size() != expected_net_count(formulation))
    throw ConfigError("field set has " + std::to_string(nets.size()) + " nets, formulation needs " +
                      std::to_string(expected_net_count(formulation)));
  for (std::size_t k = 0; k < nets.size(); ++k) {
    if (nets[k] == nullptr) throw ConfigError("field set net " + std::to_string(k) + " is null");
    const bool density_net = formulation != Formulation::PiDon && k == 0;
    if (nets[k]->query_dim() != (density_net ? 2 : 3))
      throw ConfigError("field set net " + std::to_string(k) + " takes " + std::to_string(nets[k]->query_dim()) +
                        " coordinates, expected " + (density_net ? "2 (t,x)" : "3 (t,x,v)"));
  }
  if (quadrature.size() == 0) throw ConfigError("field set has no velocity quadrature");
}

namespace {

struct MethodInfo {
  Method method;
  const char* name;
};

constexpr MethodInfo kMethods[] = {
    {Method::Pidon, "PIDON"},       {Method::Picon, "PICON"},       {Method::ApdonV1, "APDON-v1"},
    {Method::ApconV1, "APCON-v1"}, {Method::ApdonV2, "APDON-v2"}, {Method::ApconV2, "APCON-v2"},
};

std::string canonical(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != '-' && c != '_') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

}  // namespace

Method method_from_name(std::string_view name) {
  for (const auto& m : kMethods)
    if (canonical(m.name) == canonical(name)) return m.method;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string method_name(Method m) {
  for (const auto& info : kMethods)
    if (info.method == m) return info.name;
  return "?";
}

Formulation formulation_of(Method m) {
  switch (m) {
    case Method::Pidon:
    case Method::Picon: return Formulation::PiDon;
    case Method::ApdonV1:
    case Method::ApconV1: return Formulation::MicroMacro;
    case Method::ApdonV2:
    case Method::ApconV2: return Formulation::EvenOdd;
  }
  return Formulation::PiDon;
}

BranchKind branch_of(Method m) {
  return (m == Method::Pidon || m == Method::ApdonV1 || m == Method::ApdonV2) ? BranchKind::Dense
                                                                             : BranchKind::Conv;
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> v{Method::Pidon,   Method::Picon,   Method::ApdonV1,
                                     Method::ApconV1, Method::ApdonV2, Method::ApconV2};
  return v;
}

bool ModelConfig::use_layer_norm() const {
  return layer_norm.value_or(branch_of(method) == BranchKind::Conv);
}

DeepOnetConfig ModelConfig::net_config(int query_dim) const {
  DeepOnetConfig c;
  c.branch_kind = branch_of(method);
  const bool ln = use_layer_norm();
  c.dense_branch = ModifiedMlpConfig{.input_dim = height * width, .width = hidden_width,
                                     .hidden_layers = branch_layers, .output_dim = p,
                                     .activation = activation, .layer_norm = ln};
  c.conv_branch.height = height;
  c.conv_branch.width = width;
  c.conv_branch.filters = filters;
  c.conv_branch.lift_width = lift_width;
  c.conv_branch.mlp = ModifiedMlpConfig{.input_dim = lift_width, .width = hidden_width,
                                        .hidden_layers = branch_layers, .output_dim = p,
                                        .activation = activation, .layer_norm = ln};
  c.trunk = ModifiedMlpConfig{.input_dim = query_dim, .width = hidden_width, .hidden_layers = trunk_layers,
                              .output_dim = p, .activation = activation, .layer_norm = ln};
  return c;
}

OperatorModel::OperatorModel(const ModelConfig& cfg)
    : cfg_(cfg), quadrature_(gauss_legendre(cfg.quadrature_nodes)) {
  switch (formulation()) {
    case Formulation::PiDon: names_ = {"f"}; break;
    case Formulation::MicroMacro: names_ = {"rho", "g"}; break;
    case Formulation::EvenOdd: names_ = {"rho", "r", "j"}; break;
  }
  for (const auto& n : names_) {
    const bool density_net = n == "rho";
    nets_.emplace_back(cfg_.net_config(density_net ? 2 : 3), params_, n);
  }
}

FieldSet OperatorModel::fields() const {
  FieldSet fs;
  fs.formulation = formulation();
  for (const auto& n : nets_) fs.nets.push_back(&n);
  fs.quadrature = quadrature_;
  return fs;
}

void OperatorModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& n : nets_) n.initialize(params_, rng);
}

}  // namespace apcon
