#pragma once

#include <random>
#include <string>
#include <vector>

#include "apcon/modified_mlp.hpp"

namespace apcon {

enum class FilterOrder { PoolThenActivation, ActivationThenPool };

struct FilterLayerConfig {
  int channels = 4;
  int kernel_h = 2, kernel_w = 2;
  int stride_h = 2, stride_w = 2;
  int pool_h = 2, pool_w = 2;
  int pool_stride_h = 2, pool_stride_w = 2;
  FilterOrder order = FilterOrder::PoolThenActivation;
  ad::Activation activation = ad::Activation::Gelu;
};

/// Convolutional branch: filter layers (conv, average pool, activation) →
/// channel sum → flatten → affine lift → modified MLP.
struct ConvBranchConfig {
  int height = 32;
  int width = 64;
  std::vector<FilterLayerConfig> filters{FilterLayerConfig{}, FilterLayerConfig{}};
  int lift_width = 64;
  ModifiedMlpConfig mlp{.input_dim = 64, .width = 64, .hidden_layers = 5, .output_dim = 64,
                        .activation = ad::Activation::Swish, .layer_norm = true};
};

struct FilterShapes {
  int height, width, channels;
};

class ConvBranch {
 public:
  ConvBranch() = default;
  ConvBranch(const ConvBranchConfig& cfg, ParameterVector& params, const std::string& prefix);

  const ConvBranchConfig& config() const { return cfg_; }
  /// Spatial size after every filter layer (index 0 is the input).
  const std::vector<FilterShapes>& shapes() const { return shapes_; }
  /// Length of the channel-summed, flattened map.
  int flatten_length() const { return shapes_.back().height * shapes_.back().width; }

  /// a: (H*W) x B, row-major over (x, v). Returns the channel-summed flatten (H_out*W_out) x B.
  ad::Var features(ad::Tape& tape, ad::Var a) const;
  /// Full branch output: p x B.
  ad::Var forward(ad::Tape& tape, ad::Var a) const;

  void initialize(ParameterVector& params, std::mt19937_64& rng) const;

  std::vector<std::size_t> conv_segments() const;
  std::size_t lift_weight_segment() const { return lift_w_; }
  std::size_t lift_bias_segment() const { return lift_b_; }
  const ModifiedMlp& mlp() const { return mlp_; }

 private:
  struct Layer {
    std::size_t kernel = 0, bias = 0;
    ad::ConvGeometry conv;
    ad::PoolGeometry pool;
  };
  ConvBranchConfig cfg_;
  std::vector<FilterShapes> shapes_;
  std::vector<Layer> layers_;
  std::size_t lift_w_ = 0, lift_b_ = 0;
  ModifiedMlp mlp_;
};

/// Cross-correlation without padding. input: C_in x H x W (row-major), kernels
/// C_out x (C_in*kh*kw), biases C_out. Returns C_out x H' x W'.
std::vector<double> conv2d(std::span<const double> input, int in_channels, int height, int width,
                           const Eigen::MatrixXd& kernels, std::span<const double> biases, int kernel_h,
                           int kernel_w, int stride_h, int stride_w);

/// Mean pooling over C x H x W.
std::vector<double> avg_pool2d(std::span<const double> input, int channels, int height, int width,
                               int window_h, int window_w, int stride_h, int stride_w);

/// Branch output for one discretised input function (H*W values).
std::vector<double> conv_branch_forward(const ConvBranch& branch, const ParameterVector& params,
                                        std::span<const double> a);

}  // namespace apcon
