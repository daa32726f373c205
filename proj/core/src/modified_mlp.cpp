#include "apcon/modified_mlp.hpp"

#include <cmath>

#include "apcon/errors.hpp"

namespace apcon {

void ModifiedMlpConfig::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw ConfigError("modified MLP: dimensions must be positive");
  if (width <= 0) throw ConfigError("modified MLP: width must be positive");
  if (hidden_layers < 1) throw ConfigError("modified MLP: hidden_layers must be >= 1");
}

namespace {

ModifiedMlp::Affine register_affine(ParameterVector& p, const std::string& name, int out, int in) {
  ModifiedMlp::Affine a;
  a.weight = p.add_segment(name + ".w", static_cast<std::size_t>(out), static_cast<std::size_t>(in));
  a.bias = p.add_segment(name + ".b", static_cast<std::size_t>(out), 1);
  return a;
}

}  // namespace

ModifiedMlp::ModifiedMlp(const ModifiedMlpConfig& cfg, ParameterVector& params, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  enc_u_ = register_affine(params, prefix + ".enc_u", cfg.width, cfg.input_dim);
  enc_v_ = register_affine(params, prefix + ".enc_v", cfg.width, cfg.input_dim);
  enc_h_ = register_affine(params, prefix + ".enc_h", cfg.width, cfg.input_dim);
  for (int l = 1; l < cfg.hidden_layers; ++l) {
    const std::string name = prefix + ".gate" + std::to_string(l);
    Gate g;
    g.affine = register_affine(params, name, cfg.width, cfg.width);
    if (cfg.layer_norm) {
      g.ln_gain = params.add_segment(name + ".ln_gain", static_cast<std::size_t>(cfg.width), 1);
      g.ln_bias = params.add_segment(name + ".ln_bias", static_cast<std::size_t>(cfg.width), 1);
    }
    gates_.push_back(g);
  }
  out_ = register_affine(params, prefix + ".out", cfg.output_dim, cfg.width);
}

ad::Jet ModifiedMlp::forward(ad::Tape& tape, const ad::Jet& x) const {
  if (tape.value(x.value).rows() != cfg_.input_dim)
    throw ShapeError("modified MLP: expected input dimension " + std::to_string(cfg_.input_dim) + ", got " +
                     std::to_string(tape.value(x.value).rows()));
  auto dense = [&](const Affine& a, const ad::Jet& in) {
    return ad::affine(tape, tape.param(a.weight), tape.param(a.bias), in);
  };
  const auto act = cfg_.activation;
  ad::Jet u = ad::activation(tape, dense(enc_u_, x), act);
  ad::Jet v = ad::activation(tape, dense(enc_v_, x), act);
  ad::Jet h = ad::activation(tape, dense(enc_h_, x), act);
  ad::Jet v_minus_u = ad::sub(tape, v, u);
  for (const auto& g : gates_) {
    ad::Jet pre = dense(g.affine, h);
    if (cfg_.layer_norm)
      pre = ad::layer_norm(tape, pre, tape.param(g.ln_gain), tape.param(g.ln_bias), kLayerNormEps);
    ad::Jet z = ad::activation(tape, pre, act);
    // (1 − Z) ⊙ U + Z ⊙ V
    h = ad::add(tape, u, ad::mul(tape, z, v_minus_u));
  }
  return dense(out_, h);
}

void glorot_uniform(Eigen::Map<Eigen::MatrixXd> w, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
}

void ModifiedMlp::initialize(ParameterVector& params, std::mt19937_64& rng) const {
  auto init = [&](const Affine& a) {
    auto w = params.matrix(a.weight);
    glorot_uniform(w, static_cast<double>(w.cols()), static_cast<double>(w.rows()), rng);
    params.matrix(a.bias).setZero();
  };
  init(enc_u_);
  init(enc_v_);
  init(enc_h_);
  for (const auto& g : gates_) {
    init(g.affine);
    if (cfg_.layer_norm) {
      params.matrix(g.ln_gain).setOnes();
      params.matrix(g.ln_bias).setZero();
    }
  }
  init(out_);
}

std::vector<std::size_t> ModifiedMlp::segments() const {
  std::vector<std::size_t> s{enc_u_.weight, enc_u_.bias, enc_v_.weight, enc_v_.bias, enc_h_.weight, enc_h_.bias};
  for (const auto& g : gates_) {
    s.push_back(g.affine.weight);
    s.push_back(g.affine.bias);
    if (cfg_.layer_norm) {
      s.push_back(g.ln_gain);
      s.push_back(g.ln_bias);
    }
  }
  s.push_back(out_.weight);
  s.push_back(out_.bias);
  return s;
}

std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (v.size() != gain.size() || v.size() != bias.size()) throw ShapeError("layer_norm: length mismatch");
  if (v.empty()) return {};
  ad::Tape tape;
  auto col = [](std::span<const double> s) {
    return ad::Matrix(Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())));
  };
  ad::Jet x{tape.constant(col(v)), {}};
  ad::Jet y = ad::layer_norm(tape, x, tape.constant(col(gain)), tape.constant(col(bias)), eps);
  const auto& out = tape.value(y.value);
  return {out.data(), out.data() + out.size()};
}

std::vector<double> modified_mlp_forward(const ModifiedMlp& net, const ParameterVector& params,
                                         std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.config().input_dim)
    throw ShapeError("modified_mlp_forward: expected " + std::to_string(net.config().input_dim) +
                     " inputs, got " + std::to_string(x.size()));
  ad::Tape tape(&params);
  ad::Matrix in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  ad::Jet y = net.forward(tape, ad::Jet{tape.constant(in), {}});
  const auto& out = tape.value(y.value);
  return {out.data(), out.data() + out.size()};
}

}  // namespace apcon
