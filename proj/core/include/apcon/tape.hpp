#pragma once

// Matrix-valued reverse-mode tape.
//
// Every node holds a dense matrix whose columns are independent evaluation
// points (or samples) and whose rows are features. Forward-mode input
// partials are not a separate mechanism: they are built as ordinary nodes on
// the same tape (see jet.hpp), so a single reverse sweep differentiates
// losses that contain input derivatives of the networks.

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "apcon/parameter_vector.hpp"

namespace apcon::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;

  bool valid() const { return id != kNone; }
  explicit operator bool() const { return valid(); }
};

/// Activations with closed-form derivatives up to second order.
enum class Activation { Identity, Swish, Gelu, Softplus, Tanh };

Activation activation_from_name(std::string_view name);
std::string_view activation_name(Activation a);

/// Scalar activation and its derivatives; order 0, 1 or 2.
double activate(Activation a, double x, int order);

/// Elementwise activate() over a matrix, vectorized.
Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& x, int order);

/// Numerically stable softplus log(1 + exp(u)).
double softplus(double u);

struct ConvGeometry {
  Index in_channels = 1, height = 0, width = 0;
  Index out_channels = 1, kernel_h = 1, kernel_w = 1, stride_h = 1, stride_w = 1;

  Index out_height() const { return (height - kernel_h) / stride_h + 1; }
  Index out_width() const { return (width - kernel_w) / stride_w + 1; }
  void validate() const;
};

struct PoolGeometry {
  Index channels = 1, height = 0, width = 0;
  Index window_h = 1, window_w = 1, stride_h = 1, stride_w = 1;

  Index out_height() const { return (height - window_h) / stride_h + 1; }
  Index out_width() const { return (width - window_w) / stride_w + 1; }
  void validate() const;
};

class Tape {
 public:
  explicit Tape(const ParameterVector* params = nullptr);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  const ParameterVector* parameters() const { return params_; }

  // Leaves.
  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf whose gradient is retained and readable after backward().
  Var input(Matrix value);
  /// Leaf bound to a parameter segment; repeated calls return the same node.
  Var param(std::size_t segment);

  // Linear algebra.
  Var matmul(Var a, Var b);
  /// aᵀ · b.
  Var matmul_tn(Var a, Var b);
  /// x + col, col (rows x 1) broadcast over columns.
  Var add_col(Var x, Var col);
  /// x ⊙ col, col (rows x 1) broadcast over columns.
  Var mul_col(Var x, Var col);
  /// x + s, s a 1x1 node broadcast everywhere.
  Var add_scalar(Var x, Var s);

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var shift(Var a, double s);
  Var activation(Var a, Activation kind, int order = 0);
  Var pow(Var a, double exponent);
  /// Absolute value; the derivative at 0 is taken as +1.
  Var abs(Var a);

  // Reductions and reshapes.
  Var row_mean(Var a);
  Var broadcast_rows(Var a, Index rows);
  Var row(Var a, Index r);
  Var cols(Var a, Index start, Index count);
  Var gather_cols(Var a, std::vector<Index> indices);
  /// Weighted sum over contiguous column groups of size weights.size():
  /// out(:, n) = Σ_k w_k a(:, n*Q + k).
  Var group_moment(Var a, const Vector& weights);
  /// Repeats every column q times (inverse layout of group_moment).
  Var group_broadcast(Var a, Index q);
  Var sum_all(Var a);
  Var mean_all(Var a);
  /// Mean of squares of all entries.
  Var mean_square(Var a);

  // Convolutional primitives on columns laid out as C x H x W (row-major in H, W).
  Var conv2d(Var x, Var kernel, Var bias, const ConvGeometry& g);
  Var avg_pool2d(Var x, const PoolGeometry& g);
  Var channel_sum(Var x, Index channels);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  /// Gradient accumulated into v by the last backward(); zeros if none reached it.
  Matrix grad(Var v) const;

  void backward(Var out);
  void backward(Var out, const Matrix& seed);

  /// Adds every parameter-leaf gradient into `out` (length params->size()).
  void accumulate_parameter_gradient(std::span<double> out) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    Constant, Input, Param,
    MatMul, MatMulTN, AddCol, MulCol, AddScalar,
    Add, Sub, Mul, Scale, Shift, Act, Pow, Abs,
    RowMean, BroadcastRows, Row, Cols, Gather, GroupMoment, GroupBroadcast,
    SumAll, MeanAll, MeanSquare,
    Conv2d, AvgPool2d, ChannelSum,
  };

  using Aux = std::variant<std::monostate, std::vector<Index>, Vector, ConvGeometry, PoolGeometry>;

  struct Node {
    Op op = Op::Constant;
    std::uint32_t a = Var::kNone, b = Var::kNone, c = Var::kNone;
    double s = 0.0;
    Index i0 = 0, i1 = 0;
    Activation act = Activation::Identity;
    bool needs_grad = false;
    std::size_t segment = 0;
    Aux aux;
    Matrix value;
    Matrix grad;
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  bool needs(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }
  void accumulate(std::uint32_t id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(std::uint32_t id, const Expr& g);
  void backprop_node(std::uint32_t id);

  const ParameterVector* params_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> param_nodes_;
};

}  // namespace apcon::ad
