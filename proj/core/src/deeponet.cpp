#include "apcon/deeponet.hpp"

#include <cmath>

#include "apcon/errors.hpp"

namespace apcon {

int DeepOnetConfig::input_height() const {
  return conv_branch.height;
}

int DeepOnetConfig::input_width() const {
  return conv_branch.width;
}

int DeepOnetConfig::branch_output() const {
  return branch_kind == BranchKind::Conv ? conv_branch.mlp.output_dim : dense_branch.output_dim;
}

void DeepOnetConfig::validate() const {
  if (branch_output() != trunk.output_dim)
    throw ShapeError("branch width " + std::to_string(branch_output()) + " differs from trunk width " +
                     std::to_string(trunk.output_dim));
  if (branch_kind == BranchKind::Dense && dense_branch.input_dim != input_height() * input_width())
    throw ShapeError("dense branch input_dim must equal H*W");
  trunk.validate();
}

DeepOnet::DeepOnet(const DeepOnetConfig& cfg, ParameterVector& params, const std::string& prefix) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.branch_kind == BranchKind::Conv)
    conv_ = ConvBranch(cfg_.conv_branch, params, prefix + ".branch");
  else
    dense_ = ModifiedMlp(cfg_.dense_branch, params, prefix + ".branch");
  trunk_ = ModifiedMlp(cfg_.trunk, params, prefix + ".trunk");
  b0_ = params.add_segment(prefix + ".b0", 1, 1);
}

ad::Var DeepOnet::encode(ad::Tape& tape, ad::Var a) const {
  if (cfg_.branch_kind == BranchKind::Conv) return conv_.forward(tape, a);
  return dense_.forward(tape, ad::Jet{a, {}}).value;
}

ad::Jet DeepOnet::evaluate(ad::Tape& tape, ad::Var encoded, const ad::Jet& coords, ad::Index batch) const {
  if (!encoded.valid()) throw ShapeError("deeponet: evaluate needs branch encodings");
  if (tape.value(encoded).cols() != batch) throw ShapeError("deeponet: encoding batch size mismatch");
  return combine(tape, encoded, trunk(tape, coords));
}

ad::Jet DeepOnet::trunk(ad::Tape& tape, const ad::Jet& y) const { return trunk_.forward(tape, y); }

ad::Jet DeepOnet::combine(ad::Tape& tape, ad::Var encoded, const ad::Jet& trunk_out) const {
  if (tape.value(encoded).rows() != tape.value(trunk_out.value).rows())
    throw ShapeError("deeponet: branch and trunk outputs have different widths");
  return ad::inner_product(tape, encoded, trunk_out, tape.param(b0_));
}

void DeepOnet::initialize(ParameterVector& params, std::mt19937_64& rng) const {
  if (cfg_.branch_kind == BranchKind::Conv)
    conv_.initialize(params, rng);
  else
    dense_.initialize(params, rng);
  trunk_.initialize(params, rng);
  params.matrix(b0_).setZero();
}

double deeponet_eval(const DeepOnet& net, const ParameterVector& params, std::span<const double> a,
                     std::span<const double> y) {
  if (static_cast<int>(y.size()) != net.trunk_input_dim())
    throw ShapeError("deeponet_eval: query has " + std::to_string(y.size()) + " coordinates, expected " +
                     std::to_string(net.trunk_input_dim()));
  ad::Tape tape(&params);
  ad::Var av = tape.constant(Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size())));
  ad::Jet yj{tape.constant(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()))), {}};
  return tape.value(net.combine(tape, net.encode(tape, av), net.trunk(tape, yj)).value)(0, 0);
}

double deeponet_eval(std::span<const double> branch_out, std::span<const double> trunk_out, double b0) {
  if (branch_out.size() != trunk_out.size())
    throw ShapeError("deeponet_eval: branch p=" + std::to_string(branch_out.size()) +
                     " but trunk p=" + std::to_string(trunk_out.size()));
  double s = b0;
  for (std::size_t j = 0; j < branch_out.size(); ++j) s += branch_out[j] * trunk_out[j];
  return s;
}

double positive_wrap(double u) { return ad::softplus(u); }

std::size_t param_count(const ParameterVector& params) { return params.size(); }

}  // namespace apcon
