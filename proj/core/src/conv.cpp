#include "apcon/conv_branch.hpp"

#include "apcon/errors.hpp"

namespace apcon {

ConvBranch::ConvBranch(const ConvBranchConfig& cfg, ParameterVector& params, const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.filters.empty()) throw ConfigError("conv branch needs at least one filter layer");
  int h = cfg.height, w = cfg.width, c = 1;
  shapes_.push_back({h, w, c});
  for (std::size_t l = 0; l < cfg.filters.size(); ++l) {
    const auto& f = cfg.filters[l];
    Layer layer;
    layer.conv = ad::ConvGeometry{.in_channels = c, .height = h, .width = w, .out_channels = f.channels,
                                  .kernel_h = f.kernel_h, .kernel_w = f.kernel_w, .stride_h = f.stride_h,
                                  .stride_w = f.stride_w};
    layer.conv.validate();
    h = static_cast<int>(layer.conv.out_height());
    w = static_cast<int>(layer.conv.out_width());
    c = f.channels;
    layer.pool = ad::PoolGeometry{.channels = c, .height = h, .width = w, .window_h = f.pool_h,
                                  .window_w = f.pool_w, .stride_h = f.pool_stride_h,
                                  .stride_w = f.pool_stride_w};
    layer.pool.validate();
    h = static_cast<int>(layer.pool.out_height());
    w = static_cast<int>(layer.pool.out_width());
    const std::string name = prefix + ".filter" + std::to_string(l + 1);
    layer.kernel = params.add_segment(name + ".kernel", static_cast<std::size_t>(f.channels),
                                      static_cast<std::size_t>(layer.conv.in_channels * f.kernel_h * f.kernel_w));
    layer.bias = params.add_segment(name + ".bias", static_cast<std::size_t>(f.channels), 1);
    layers_.push_back(layer);
    shapes_.push_back({h, w, c});
  }
  lift_w_ = params.add_segment(prefix + ".lift.w", static_cast<std::size_t>(cfg.lift_width),
                               static_cast<std::size_t>(h * w));
  lift_b_ = params.add_segment(prefix + ".lift.b", static_cast<std::size_t>(cfg.lift_width), 1);
  ModifiedMlpConfig mlp = cfg.mlp;
  mlp.input_dim = cfg.lift_width;
  mlp_ = ModifiedMlp(mlp, params, prefix + ".mlp");
}

ad::Var ConvBranch::features(ad::Tape& tape, ad::Var a) const {
  if (tape.value(a).rows() != static_cast<ad::Index>(cfg_.height) * cfg_.width)
    throw ShapeError("conv branch: input has " + std::to_string(tape.value(a).rows()) + " rows, expected " +
                     std::to_string(cfg_.height * cfg_.width));
  ad::Var x = a;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const auto& f = cfg_.filters[l];
    x = tape.conv2d(x, tape.param(layer.kernel), tape.param(layer.bias), layer.conv);
    if (f.order == FilterOrder::PoolThenActivation) {
      x = tape.avg_pool2d(x, layer.pool);
      x = tape.activation(x, f.activation);
    } else {
      x = tape.activation(x, f.activation);
      x = tape.avg_pool2d(x, layer.pool);
    }
  }
  return tape.channel_sum(x, shapes_.back().channels);
}

ad::Var ConvBranch::forward(ad::Tape& tape, ad::Var a) const {
  ad::Var flat = features(tape, a);
  ad::Var lifted = tape.add_col(tape.matmul(tape.param(lift_w_), flat), tape.param(lift_b_));
  return mlp_.forward(tape, ad::Jet{lifted, {}}).value;
}

void ConvBranch::initialize(ParameterVector& params, std::mt19937_64& rng) const {
  for (const auto& layer : layers_) {
    const double taps = static_cast<double>(layer.conv.kernel_h * layer.conv.kernel_w);
    glorot_uniform(params.matrix(layer.kernel), taps * static_cast<double>(layer.conv.in_channels),
                   taps * static_cast<double>(layer.conv.out_channels), rng);
    params.matrix(layer.bias).setZero();
  }
  auto lw = params.matrix(lift_w_);
  glorot_uniform(lw, static_cast<double>(lw.cols()), static_cast<double>(lw.rows()), rng);
  params.matrix(lift_b_).setZero();
  mlp_.initialize(params, rng);
}

std::vector<std::size_t> ConvBranch::conv_segments() const {
  std::vector<std::size_t> s;
  for (const auto& l : layers_) {
    s.push_back(l.kernel);
    s.push_back(l.bias);
  }
  return s;
}

namespace {

ad::Matrix as_column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::vector<double> conv2d(std::span<const double> input, int in_channels, int height, int width,
                           const Eigen::MatrixXd& kernels, std::span<const double> biases, int kernel_h,
                           int kernel_w, int stride_h, int stride_w) {
  ad::ConvGeometry g{.in_channels = in_channels, .height = height, .width = width,
                     .out_channels = kernels.rows(), .kernel_h = kernel_h, .kernel_w = kernel_w,
                     .stride_h = stride_h, .stride_w = stride_w};
  if (static_cast<ad::Index>(input.size()) != static_cast<ad::Index>(in_channels) * height * width)
    throw ShapeError("conv2d: input length does not match C*H*W");
  ad::Tape tape;
  ad::Var out = tape.conv2d(tape.constant(as_column(input)), tape.constant(kernels),
                            tape.constant(as_column(biases)), g);
  const auto& v = tape.value(out);
  return {v.data(), v.data() + v.size()};
}

std::vector<double> avg_pool2d(std::span<const double> input, int channels, int height, int width,
                               int window_h, int window_w, int stride_h, int stride_w) {
  ad::PoolGeometry g{.channels = channels, .height = height, .width = width, .window_h = window_h,
                     .window_w = window_w, .stride_h = stride_h, .stride_w = stride_w};
  if (static_cast<ad::Index>(input.size()) != static_cast<ad::Index>(channels) * height * width)
    throw ShapeError("avg_pool2d: input length does not match C*H*W");
  ad::Tape tape;
  ad::Var out = tape.avg_pool2d(tape.constant(as_column(input)), g);
  const auto& v = tape.value(out);
  return {v.data(), v.data() + v.size()};
}

std::vector<double> conv_branch_forward(const ConvBranch& branch, const ParameterVector& params,
                                        std::span<const double> a) {
  ad::Tape tape(&params);
  ad::Var out = branch.forward(tape, tape.constant(as_column(a)));
  const auto& v = tape.value(out);
  return {v.data(), v.data() + v.size()};
}

}  // namespace apcon
