#include "apcon/tape.hpp"

#include <cmath>
#include <string>

#include "apcon/errors.hpp"

namespace apcon::ad {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Activation activation_from_name(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::Identity;
  if (name == "swish" || name == "silu") return Activation::Swish;
  if (name == "gelu") return Activation::Gelu;
  if (name == "softplus") return Activation::Softplus;
  if (name == "tanh") return Activation::Tanh;
  throw UnsupportedOperation("activation '" + std::string(name) + "' is not a registered primitive");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Swish: return "swish";
    case Activation::Gelu: return "gelu";
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

double softplus(double u) {
  if (u > 0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

double activate(Activation a, double x, int order) {
  if (order < 0 || order > 2)
    throw UnsupportedOperation("derivative order " + std::to_string(order) + " of " +
                               std::string(activation_name(a)) + " is not registered");
  switch (a) {
    case Activation::Identity:
      return order == 0 ? x : (order == 1 ? 1.0 : 0.0);
    case Activation::Swish: {
      double s = sigmoid(x);
      double d = s * (1.0 - s);
      if (order == 0) return x * s;
      if (order == 1) return s + x * d;
      return d * (2.0 + x * (1.0 - 2.0 * s));
    }
    case Activation::Gelu: {
      // tanh approximation
      double u = kGeluC * (x + kGeluA * x * x * x);
      double t = std::tanh(u);
      if (order == 0) return 0.5 * x * (1.0 + t);
      double sech2 = 1.0 - t * t;
      double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      if (order == 1) return 0.5 * (1.0 + t) + 0.5 * x * sech2 * du;
      double ddu = kGeluC * 6.0 * kGeluA * x;
      return sech2 * du + 0.5 * x * sech2 * (ddu - 2.0 * t * du * du);
    }
    case Activation::Softplus: {
      if (order == 0) return softplus(x);
      double s = sigmoid(x);
      if (order == 1) return s;
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      double t = std::tanh(x);
      if (order == 0) return t;
      if (order == 1) return 1.0 - t * t;
      return -2.0 * t * (1.0 - t * t);
    }
  }
  return 0.0;
}

namespace {

// tanh(u) as 1 − 2/(e^{2u} + 1); saturates cleanly at ±1.
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& u) { return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0); }

}  // namespace

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& xm, int order) {
  if (order < 0 || order > 2)
    throw UnsupportedOperation("derivative order " + std::to_string(order) + " of " +
                               std::string(activation_name(a)) + " is not registered");
  const auto x = xm.array();
  switch (a) {
    case Activation::Identity:
      if (order == 0) return xm;
      return Eigen::MatrixXd::Constant(xm.rows(), xm.cols(), order == 1 ? 1.0 : 0.0);
    case Activation::Swish: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
      if (order == 0) return (x * s).matrix();
      const Eigen::ArrayXXd d = s * (1.0 - s);
      if (order == 1) return (s + x * d).matrix();
      return (d * (2.0 + x * (1.0 - 2.0 * s))).matrix();
    }
    case Activation::Gelu: {
      const Eigen::ArrayXXd t = fast_tanh(kGeluC * (x + kGeluA * x.cube()));
      if (order == 0) return (0.5 * x * (1.0 + t)).matrix();
      const Eigen::ArrayXXd sech2 = 1.0 - t.square();
      const Eigen::ArrayXXd du = kGeluC * (1.0 + 3.0 * kGeluA * x.square());
      if (order == 1) return (0.5 * (1.0 + t) + 0.5 * x * sech2 * du).matrix();
      return (sech2 * du + 0.5 * x * sech2 * (kGeluC * 6.0 * kGeluA * x - 2.0 * t * du.square())).matrix();
    }
    case Activation::Softplus: {
      if (order == 0) return (x.max(0.0) + (-x.abs()).exp().log1p()).matrix();
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
      if (order == 1) return s.matrix();
      return (s * (1.0 - s)).matrix();
    }
    case Activation::Tanh: {
      const Eigen::ArrayXXd t = fast_tanh(x);
      if (order == 0) return t.matrix();
      if (order == 1) return (1.0 - t.square()).matrix();
      return (-2.0 * t * (1.0 - t.square())).matrix();
    }
  }
  return xm;
}

void ConvGeometry::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || kernel_h <= 0 || kernel_w <= 0 || stride_h <= 0 ||
      stride_w <= 0)
    throw ShapeError("conv2d: non-positive channel/kernel/stride");
  if (height < kernel_h || width < kernel_w)
    throw ShapeError("conv2d: kernel larger than input");
  if ((height - kernel_h) % stride_h != 0 || (width - kernel_w) % stride_w != 0)
    throw ShapeError("conv2d: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by kernel/stride (no implicit padding)");
}

void PoolGeometry::validate() const {
  if (channels <= 0 || window_h <= 0 || window_w <= 0 || stride_h <= 0 || stride_w <= 0)
    throw ShapeError("avg_pool2d: non-positive window/stride");
  if (height < window_h || width < window_w) throw ShapeError("avg_pool2d: window larger than input");
  if ((height - window_h) % stride_h != 0 || (width - window_w) % stride_w != 0)
    throw ShapeError("avg_pool2d: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by window/stride");
}

Tape::Tape(const ParameterVector* params) : params_(params) {
  nodes_.reserve(256);
  if (params_) param_nodes_.assign(params_->segment_count(), Var::kNone);
}

Var Tape::push(Node n) {
  if (nodes_.size() >= Var::kNone) throw Error("tape overflow");
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid tape variable");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid tape variable");
  return nodes_[v.id];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) throw ShapeError("scalar(): node is " + shape_str(m));
  return m(0, 0);
}

Matrix Tape::grad(Var v) const {
  const auto& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::input(Matrix value) {
  Node n;
  n.op = Op::Input;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(std::size_t segment) {
  if (!params_) throw Error("tape has no parameter vector bound");
  if (segment >= param_nodes_.size()) throw ShapeError("parameter segment index out of range");
  if (param_nodes_[segment] != Var::kNone) return Var{param_nodes_[segment]};
  Node n;
  n.op = Op::Param;
  n.needs_grad = true;
  n.segment = segment;
  n.value = params_->matrix(segment);
  Var v = push(std::move(n));
  param_nodes_[segment] = v.id;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) throw ShapeError("matmul: " + shape_str(A) + " * " + shape_str(B));
  Node n{.op = Op::MatMul, .a = a.id, .b = b.id};
  n.needs_grad = needs(a) || needs(b);
  n.value.noalias() = A * B;
  return push(std::move(n));
}

Var Tape::matmul_tn(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rows() != B.rows()) throw ShapeError("matmul_tn: " + shape_str(A) + "^T * " + shape_str(B));
  Node n{.op = Op::MatMulTN, .a = a.id, .b = b.id};
  n.needs_grad = needs(a) || needs(b);
  n.value.noalias() = A.transpose() * B;
  return push(std::move(n));
}

Var Tape::add_col(Var x, Var col) {
  const auto& X = value(x);
  const auto& C = value(col);
  if (C.cols() != 1 || C.rows() != X.rows()) throw ShapeError("add_col: " + shape_str(X) + " + " + shape_str(C));
  Node n{.op = Op::AddCol, .a = x.id, .b = col.id};
  n.needs_grad = needs(x) || needs(col);
  n.value = X.colwise() + C.col(0);
  return push(std::move(n));
}

Var Tape::mul_col(Var x, Var col) {
  const auto& X = value(x);
  const auto& C = value(col);
  if (C.cols() != 1 || C.rows() != X.rows()) throw ShapeError("mul_col: " + shape_str(X) + " * " + shape_str(C));
  Node n{.op = Op::MulCol, .a = x.id, .b = col.id};
  n.needs_grad = needs(x) || needs(col);
  n.value = X.array().colwise() * C.col(0).array();
  return push(std::move(n));
}

Var Tape::add_scalar(Var x, Var s) {
  const auto& S = value(s);
  if (S.size() != 1) throw ShapeError("add_scalar: scalar operand is " + shape_str(S));
  Node n{.op = Op::AddScalar, .a = x.id, .b = s.id};
  n.needs_grad = needs(x) || needs(s);
  n.value = value(x).array() + S(0, 0);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Node n{.op = Op::Add, .a = a.id, .b = b.id};
  n.needs_grad = needs(a) || needs(b);
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Node n{.op = Op::Sub, .a = a.id, .b = b.id};
  n.needs_grad = needs(a) || needs(b);
  n.value = value(a) - value(b);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Node n{.op = Op::Mul, .a = a.id, .b = b.id};
  n.needs_grad = needs(a) || needs(b);
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n{.op = Op::Scale, .a = a.id, .s = s};
  n.needs_grad = needs(a);
  n.value = s * value(a);
  return push(std::move(n));
}

Var Tape::shift(Var a, double s) {
  Node n{.op = Op::Shift, .a = a.id, .s = s};
  n.needs_grad = needs(a);
  n.value = value(a).array() + s;
  return push(std::move(n));
}

Var Tape::activation(Var a, Activation kind, int order) {
  // Order 2 nodes would need a third derivative on the reverse sweep.
  if (order < 0 || order > 1)
    throw UnsupportedOperation("activation derivative of order " + std::to_string(order) +
                               " cannot be recorded (nesting deeper than second order)");
  Node n{.op = Op::Act, .a = a.id, .i0 = order, .act = kind};
  n.needs_grad = needs(a);
  n.value = activate(kind, value(a), order);
  return push(std::move(n));
}

Var Tape::pow(Var a, double exponent) {
  Node n{.op = Op::Pow, .a = a.id, .s = exponent};
  n.needs_grad = needs(a);
  n.value = value(a).array().pow(exponent);
  return push(std::move(n));
}

Var Tape::abs(Var a) {
  Node n{.op = Op::Abs, .a = a.id};
  n.needs_grad = needs(a);
  n.value = value(a).cwiseAbs();
  return push(std::move(n));
}

Var Tape::row_mean(Var a) {
  Node n{.op = Op::RowMean, .a = a.id};
  n.needs_grad = needs(a);
  n.value = value(a).colwise().mean();
  return push(std::move(n));
}

Var Tape::broadcast_rows(Var a, Index rows) {
  const auto& A = value(a);
  if (A.rows() != 1) throw ShapeError("broadcast_rows: operand must have one row, got " + shape_str(A));
  Node n{.op = Op::BroadcastRows, .a = a.id, .i0 = rows};
  n.needs_grad = needs(a);
  n.value = A.replicate(rows, 1);
  return push(std::move(n));
}

Var Tape::row(Var a, Index r) {
  const auto& A = value(a);
  if (r < 0 || r >= A.rows()) throw ShapeError("row: index out of range");
  Node n{.op = Op::Row, .a = a.id, .i0 = r};
  n.needs_grad = needs(a);
  n.value = A.row(r);
  return push(std::move(n));
}

Var Tape::cols(Var a, Index start, Index count) {
  const auto& A = value(a);
  if (start < 0 || count < 0 || start + count > A.cols()) throw ShapeError("cols: range out of bounds");
  Node n{.op = Op::Cols, .a = a.id, .i0 = start, .i1 = count};
  n.needs_grad = needs(a);
  n.value = A.middleCols(start, count);
  return push(std::move(n));
}

Var Tape::gather_cols(Var a, std::vector<Index> indices) {
  const auto& A = value(a);
  Node n{.op = Op::Gather, .a = a.id};
  n.needs_grad = needs(a);
  n.value.resize(A.rows(), static_cast<Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= A.cols()) throw ShapeError("gather_cols: index out of range");
    n.value.col(static_cast<Index>(k)) = A.col(indices[k]);
  }
  n.aux = std::move(indices);
  return push(std::move(n));
}

Var Tape::group_moment(Var a, const Vector& weights) {
  const auto& A = value(a);
  const Index q = weights.size();
  if (q == 0 || A.cols() % q != 0) throw ShapeError("group_moment: columns not divisible by group size");
  const Index groups = A.cols() / q;
  Node n{.op = Op::GroupMoment, .a = a.id};
  n.needs_grad = needs(a);
  n.value = Matrix::Zero(A.rows(), groups);
  for (Index g = 0; g < groups; ++g)
    for (Index k = 0; k < q; ++k) n.value.col(g) += weights[k] * A.col(g * q + k);
  n.aux = weights;
  return push(std::move(n));
}

Var Tape::group_broadcast(Var a, Index q) {
  const auto& A = value(a);
  Node n{.op = Op::GroupBroadcast, .a = a.id, .i0 = q};
  n.needs_grad = needs(a);
  n.value.resize(A.rows(), A.cols() * q);
  for (Index g = 0; g < A.cols(); ++g)
    for (Index k = 0; k < q; ++k) n.value.col(g * q + k) = A.col(g);
  return push(std::move(n));
}

Var Tape::sum_all(Var a) {
  Node n{.op = Op::SumAll, .a = a.id};
  n.needs_grad = needs(a);
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var Tape::mean_all(Var a) {
  const auto& A = value(a);
  if (A.size() == 0) throw ShapeError("mean_all: empty operand");
  Node n{.op = Op::MeanAll, .a = a.id};
  n.needs_grad = needs(a);
  n.value = Matrix::Constant(1, 1, A.mean());
  return push(std::move(n));
}

Var Tape::mean_square(Var a) {
  const auto& A = value(a);
  if (A.size() == 0) throw ShapeError("mean_square: empty operand");
  Node n{.op = Op::MeanSquare, .a = a.id};
  n.needs_grad = needs(a);
  n.value = Matrix::Constant(1, 1, A.squaredNorm() / static_cast<double>(A.size()));
  return push(std::move(n));
}

namespace {

// Column of one sample (C x H x W) -> patches (Cin*kh*kw) x (H'*W').
void im2col(const double* x, const ConvGeometry& g, Matrix& patches) {
  const Index oh = g.out_height(), ow = g.out_width();
  patches.resize(g.in_channels * g.kernel_h * g.kernel_w, oh * ow);
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index i = 0; i < g.kernel_h; ++i)
      for (Index j = 0; j < g.kernel_w; ++j) {
        const Index r = (c * g.kernel_h + i) * g.kernel_w + j;
        for (Index p = 0; p < oh; ++p)
          for (Index q = 0; q < ow; ++q)
            patches(r, p * ow + q) =
                x[(c * g.height + p * g.stride_h + i) * g.width + q * g.stride_w + j];
      }
}

void col2im_add(const Matrix& patches, const ConvGeometry& g, double* x) {
  const Index oh = g.out_height(), ow = g.out_width();
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index i = 0; i < g.kernel_h; ++i)
      for (Index j = 0; j < g.kernel_w; ++j) {
        const Index r = (c * g.kernel_h + i) * g.kernel_w + j;
        for (Index p = 0; p < oh; ++p)
          for (Index q = 0; q < ow; ++q)
            x[(c * g.height + p * g.stride_h + i) * g.width + q * g.stride_w + j] +=
                patches(r, p * ow + q);
      }
}

}  // namespace

Var Tape::conv2d(Var x, Var kernel, Var bias, const ConvGeometry& g) {
  g.validate();
  const auto& X = value(x);
  const auto& K = value(kernel);
  const auto& b = value(bias);
  if (X.rows() != g.in_channels * g.height * g.width)
    throw ShapeError("conv2d: input rows " + std::to_string(X.rows()) + " do not match C*H*W");
  if (K.rows() != g.out_channels || K.cols() != g.in_channels * g.kernel_h * g.kernel_w)
    throw ShapeError("conv2d: kernel shape " + shape_str(K));
  if (b.rows() != g.out_channels || b.cols() != 1) throw ShapeError("conv2d: bias shape " + shape_str(b));
  const Index ohw = g.out_height() * g.out_width();
  Node n{.op = Op::Conv2d, .a = x.id, .b = kernel.id, .c = bias.id};
  n.needs_grad = needs(x) || needs(kernel) || needs(bias);
  n.value.resize(g.out_channels * ohw, X.cols());
  Matrix patches, out;
  for (Index s = 0; s < X.cols(); ++s) {
    im2col(X.col(s).data(), g, patches);
    out.noalias() = K * patches;
    out.colwise() += b.col(0);
    // out is Cout x (H'W'); column-major store maps (o, pq) -> o + Cout*pq, we need o*HW + pq.
    Eigen::Map<Matrix>(n.value.col(s).data(), ohw, g.out_channels) = out.transpose();
  }
  n.aux = g;
  return push(std::move(n));
}

Var Tape::avg_pool2d(Var x, const PoolGeometry& g) {
  g.validate();
  const auto& X = value(x);
  if (X.rows() != g.channels * g.height * g.width)
    throw ShapeError("avg_pool2d: input rows do not match C*H*W");
  const Index oh = g.out_height(), ow = g.out_width();
  const double inv = 1.0 / static_cast<double>(g.window_h * g.window_w);
  Node n{.op = Op::AvgPool2d, .a = x.id};
  n.needs_grad = needs(x);
  n.value = Matrix::Zero(g.channels * oh * ow, X.cols());
  for (Index s = 0; s < X.cols(); ++s)
    for (Index c = 0; c < g.channels; ++c)
      for (Index p = 0; p < oh; ++p)
        for (Index q = 0; q < ow; ++q) {
          double acc = 0.0;
          for (Index i = 0; i < g.window_h; ++i)
            for (Index j = 0; j < g.window_w; ++j)
              acc += X((c * g.height + p * g.stride_h + i) * g.width + q * g.stride_w + j, s);
          n.value((c * oh + p) * ow + q, s) = acc * inv;
        }
  n.aux = g;
  return push(std::move(n));
}

Var Tape::channel_sum(Var x, Index channels) {
  const auto& X = value(x);
  if (channels <= 0 || X.rows() % channels != 0) throw ShapeError("channel_sum: rows not divisible by channels");
  const Index hw = X.rows() / channels;
  Node n{.op = Op::ChannelSum, .a = x.id, .i0 = channels};
  n.needs_grad = needs(x);
  n.value = Matrix::Zero(hw, X.cols());
  for (Index c = 0; c < channels; ++c) n.value += X.middleRows(c * hw, hw);
  return push(std::move(n));
}

void Tape::accumulate(std::uint32_t id, const Matrix& g) {
  auto& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

template <typename Expr>
void Tape::accumulate_expr(std::uint32_t id, const Expr& g) {
  auto& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var out) {
  const auto& v = value(out);
  if (v.size() != 1) throw ShapeError("backward(): output must be scalar, got " + shape_str(v));
  backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  auto& o = node(out);
  require_same_shape(o.value, seed, "backward seed");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!o.needs_grad) return;
  o.grad = seed;
  for (std::uint32_t id = out.id + 1; id-- > 0;) {
    if (nodes_[id].grad.size() == 0) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(std::uint32_t id) {
  const Node& n = nodes_[id];
  const Matrix& G = n.grad;
  switch (n.op) {
    case Op::Constant:
    case Op::Input:
    case Op::Param:
      break;
    case Op::MatMul:
      if (needs(Var{n.a})) accumulate_expr(n.a, G * nodes_[n.b].value.transpose());
      if (needs(Var{n.b})) accumulate_expr(n.b, nodes_[n.a].value.transpose() * G);
      break;
    case Op::MatMulTN:
      if (needs(Var{n.a})) accumulate_expr(n.a, nodes_[n.b].value * G.transpose());
      if (needs(Var{n.b})) accumulate_expr(n.b, nodes_[n.a].value * G);
      break;
    case Op::AddCol:
      accumulate(n.a, G);
      if (needs(Var{n.b})) accumulate_expr(n.b, G.rowwise().sum());
      break;
    case Op::MulCol: {
      const auto& C = nodes_[n.b].value;
      if (needs(Var{n.a})) accumulate_expr(n.a, (G.array().colwise() * C.col(0).array()).matrix());
      if (needs(Var{n.b}))
        accumulate_expr(n.b, G.cwiseProduct(nodes_[n.a].value).rowwise().sum());
      break;
    }
    case Op::AddScalar:
      accumulate(n.a, G);
      if (needs(Var{n.b})) accumulate_expr(n.b, Matrix::Constant(1, 1, G.sum()));
      break;
    case Op::Add:
      accumulate(n.a, G);
      accumulate(n.b, G);
      break;
    case Op::Sub:
      accumulate(n.a, G);
      if (needs(Var{n.b})) accumulate_expr(n.b, -G);
      break;
    case Op::Mul:
      if (needs(Var{n.a})) accumulate_expr(n.a, G.cwiseProduct(nodes_[n.b].value));
      if (needs(Var{n.b})) accumulate_expr(n.b, G.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::Scale:
      accumulate_expr(n.a, n.s * G);
      break;
    case Op::Shift:
      accumulate(n.a, G);
      break;
    case Op::Act: {
      const int next = static_cast<int>(n.i0) + 1;
      const Activation kind = n.act;
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, G.cwiseProduct(activate(kind, A, next)));
      break;
    }
    case Op::Pow: {
      const double p = n.s;
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, (G.array() * p * A.array().pow(p - 1.0)).matrix());
      break;
    }
    case Op::Abs: {
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, (G.array() * ((A.array() >= 0.0).cast<double>() * 2.0 - 1.0)).matrix());
      break;
    }
    case Op::RowMean: {
      const Index rows = nodes_[n.a].value.rows();
      accumulate_expr(n.a, (G / static_cast<double>(rows)).replicate(rows, 1));
      break;
    }
    case Op::BroadcastRows:
      accumulate_expr(n.a, G.colwise().sum());
      break;
    case Op::Row: {
      if (!needs(Var{n.a})) break;
      const auto& A = nodes_[n.a].value;
      Matrix g = Matrix::Zero(A.rows(), A.cols());
      g.row(n.i0) = G;
      accumulate(n.a, g);
      break;
    }
    case Op::Cols: {
      if (!needs(Var{n.a})) break;
      const auto& A = nodes_[n.a].value;
      Matrix g = Matrix::Zero(A.rows(), A.cols());
      g.middleCols(n.i0, n.i1) = G;
      accumulate(n.a, g);
      break;
    }
    case Op::Gather: {
      if (!needs(Var{n.a})) break;
      const auto& A = nodes_[n.a].value;
      const auto& idx = std::get<std::vector<Index>>(n.aux);
      Matrix g = Matrix::Zero(A.rows(), A.cols());
      for (std::size_t k = 0; k < idx.size(); ++k) g.col(idx[k]) += G.col(static_cast<Index>(k));
      accumulate(n.a, g);
      break;
    }
    case Op::GroupMoment: {
      if (!needs(Var{n.a})) break;
      const auto& w = std::get<Vector>(n.aux);
      const Index q = w.size();
      Matrix g(G.rows(), G.cols() * q);
      for (Index grp = 0; grp < G.cols(); ++grp)
        for (Index k = 0; k < q; ++k) g.col(grp * q + k) = w[k] * G.col(grp);
      accumulate(n.a, g);
      break;
    }
    case Op::GroupBroadcast: {
      if (!needs(Var{n.a})) break;
      const Index q = n.i0;
      const Index groups = G.cols() / q;
      Matrix g = Matrix::Zero(G.rows(), groups);
      for (Index grp = 0; grp < groups; ++grp)
        for (Index k = 0; k < q; ++k) g.col(grp) += G.col(grp * q + k);
      accumulate(n.a, g);
      break;
    }
    case Op::SumAll: {
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, Matrix::Constant(A.rows(), A.cols(), G(0, 0)));
      break;
    }
    case Op::MeanAll: {
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, Matrix::Constant(A.rows(), A.cols(), G(0, 0) / static_cast<double>(A.size())));
      break;
    }
    case Op::MeanSquare: {
      const auto& A = nodes_[n.a].value;
      accumulate_expr(n.a, (2.0 * G(0, 0) / static_cast<double>(A.size())) * A);
      break;
    }
    case Op::Conv2d: {
      const auto& g = std::get<ConvGeometry>(n.aux);
      const auto& X = nodes_[n.a].value;
      const auto& K = nodes_[n.b].value;
      const Index ohw = g.out_height() * g.out_width();
      const bool gx = needs(Var{n.a}), gk = needs(Var{n.b}), gb = needs(Var{n.c});
      Matrix dX, dK, dB;
      if (gx) dX = Matrix::Zero(X.rows(), X.cols());
      if (gk) dK = Matrix::Zero(K.rows(), K.cols());
      if (gb) dB = Matrix::Zero(K.rows(), 1);
      Matrix patches, gout, dpatches;
      for (Index s = 0; s < X.cols(); ++s) {
        gout = Eigen::Map<const Matrix>(G.col(s).data(), ohw, g.out_channels).transpose();
        if (gb) dB += gout.rowwise().sum();
        if (gk) {
          im2col(X.col(s).data(), g, patches);
          dK.noalias() += gout * patches.transpose();
        }
        if (gx) {
          dpatches.noalias() = K.transpose() * gout;
          col2im_add(dpatches, g, dX.col(s).data());
        }
      }
      if (gx) accumulate(n.a, dX);
      if (gk) accumulate(n.b, dK);
      if (gb) accumulate(n.c, dB);
      break;
    }
    case Op::AvgPool2d: {
      if (!needs(Var{n.a})) break;
      const auto& g = std::get<PoolGeometry>(n.aux);
      const auto& X = nodes_[n.a].value;
      const Index oh = g.out_height(), ow = g.out_width();
      const double inv = 1.0 / static_cast<double>(g.window_h * g.window_w);
      Matrix dX = Matrix::Zero(X.rows(), X.cols());
      for (Index s = 0; s < X.cols(); ++s)
        for (Index c = 0; c < g.channels; ++c)
          for (Index p = 0; p < oh; ++p)
            for (Index q = 0; q < ow; ++q) {
              const double v = G((c * oh + p) * ow + q, s) * inv;
              for (Index i = 0; i < g.window_h; ++i)
                for (Index j = 0; j < g.window_w; ++j)
                  dX((c * g.height + p * g.stride_h + i) * g.width + q * g.stride_w + j, s) += v;
            }
      accumulate(n.a, dX);
      break;
    }
    case Op::ChannelSum: {
      if (!needs(Var{n.a})) break;
      accumulate_expr(n.a, G.replicate(n.i0, 1));
      break;
    }
  }
}

void Tape::accumulate_parameter_gradient(std::span<double> out) const {
  if (!params_) return;
  if (out.size() != params_->size()) throw ShapeError("gradient buffer does not match parameter vector");
  for (std::size_t seg = 0; seg < param_nodes_.size(); ++seg) {
    const auto id = param_nodes_[seg];
    if (id == Var::kNone) continue;
    const auto& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    const auto& s = params_->segment(seg);
    Eigen::Map<Eigen::VectorXd>(out.data() + s.offset, static_cast<Index>(s.length())) +=
        Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  }
}

}  // namespace apcon::ad
