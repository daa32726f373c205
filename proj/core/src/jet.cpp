#include "apcon/jet.hpp"

#include "apcon/errors.hpp"

namespace apcon::ad {

namespace {

template <typename F>
Jet map_tangents(const Jet& x, Var value, F&& f) {
  Jet out{value, std::vector<Var>(x.order())};
  for (std::size_t k = 0; k < x.order(); ++k)
    if (x.tangents[k].valid()) out.tangents[k] = f(x.tangents[k]);
  return out;
}

void require_same_order(const Jet& a, const Jet& b) {
  if (a.order() != b.order()) throw ShapeError("jet tangent counts differ");
}

}  // namespace

Jet seed_coordinates(Tape& tape, const Matrix& coords, const std::vector<Index>& wrt) {
  Jet j{tape.constant(coords), {}};
  j.tangents.reserve(wrt.size());
  for (Index c : wrt) {
    if (c < 0 || c >= coords.rows())
      throw ShapeError("wrt index " + std::to_string(c) + " is not a coordinate position");
    Matrix e = Matrix::Zero(coords.rows(), coords.cols());
    e.row(c).setOnes();
    j.tangents.push_back(tape.constant(std::move(e)));
  }
  return j;
}

Jet lift(Var value, std::size_t tangents) { return Jet{value, std::vector<Var>(tangents)}; }

Var tangent_or_zero(Tape& tape, const Jet& j, std::size_t k) {
  if (j.has_tangent(k)) return j.tangents[k];
  const auto& v = tape.value(j.value);
  return tape.constant(Matrix::Zero(v.rows(), v.cols()));
}

Jet affine(Tape& tape, Var weight, Var bias, const Jet& x) {
  Var v = tape.add_col(tape.matmul(weight, x.value), bias);
  return map_tangents(x, v, [&](Var t) { return tape.matmul(weight, t); });
}

Jet activation(Tape& tape, const Jet& x, Activation kind) {
  Var v = tape.activation(x.value, kind, 0);
  bool any = false;
  for (const auto& t : x.tangents) any = any || t.valid();
  if (!any) return lift(v, x.order());
  Var d = tape.activation(x.value, kind, 1);
  return map_tangents(x, v, [&](Var t) { return tape.mul(d, t); });
}

Jet add(Tape& tape, const Jet& a, const Jet& b) {
  require_same_order(a, b);
  Jet out{tape.add(a.value, b.value), std::vector<Var>(a.order())};
  for (std::size_t k = 0; k < a.order(); ++k) {
    const bool ha = a.has_tangent(k), hb = b.has_tangent(k);
    if (ha && hb)
      out.tangents[k] = tape.add(a.tangents[k], b.tangents[k]);
    else if (ha)
      out.tangents[k] = a.tangents[k];
    else if (hb)
      out.tangents[k] = b.tangents[k];
  }
  return out;
}

Jet sub(Tape& tape, const Jet& a, const Jet& b) {
  require_same_order(a, b);
  Jet out{tape.sub(a.value, b.value), std::vector<Var>(a.order())};
  for (std::size_t k = 0; k < a.order(); ++k) {
    const bool ha = a.has_tangent(k), hb = b.has_tangent(k);
    if (ha && hb)
      out.tangents[k] = tape.sub(a.tangents[k], b.tangents[k]);
    else if (ha)
      out.tangents[k] = a.tangents[k];
    else if (hb)
      out.tangents[k] = tape.scale(b.tangents[k], -1.0);
  }
  return out;
}

Jet mul(Tape& tape, const Jet& a, const Jet& b) {
  require_same_order(a, b);
  Jet out{tape.mul(a.value, b.value), std::vector<Var>(a.order())};
  for (std::size_t k = 0; k < a.order(); ++k) {
    const bool ha = a.has_tangent(k), hb = b.has_tangent(k);
    Var ta = ha ? tape.mul(a.tangents[k], b.value) : Var{};
    Var tb = hb ? tape.mul(a.value, b.tangents[k]) : Var{};
    if (ha && hb)
      out.tangents[k] = tape.add(ta, tb);
    else
      out.tangents[k] = ha ? ta : tb;
  }
  return out;
}

Jet scale(Tape& tape, const Jet& a, double s) {
  return map_tangents(a, tape.scale(a.value, s), [&](Var t) { return tape.scale(t, s); });
}

Jet shift(Tape& tape, const Jet& a, double s) {
  return map_tangents(a, tape.shift(a.value, s), [](Var t) { return t; });
}

Jet layer_norm(Tape& tape, const Jet& x, Var gain, Var bias, double eps) {
  const Index rows = tape.value(x.value).rows();
  Var mean = tape.row_mean(x.value);
  Var centered = tape.sub(x.value, tape.broadcast_rows(mean, rows));
  Var var = tape.row_mean(tape.mul(centered, centered));
  Var var_eps = tape.shift(var, eps);
  Var inv_std = tape.pow(var_eps, -0.5);
  Var inv_std_b = tape.broadcast_rows(inv_std, rows);
  Var normalized = tape.mul(centered, inv_std_b);
  Var out = tape.add_col(tape.mul_col(normalized, gain), bias);

  Jet result{out, std::vector<Var>(x.order())};
  Var inv_std3;
  for (std::size_t k = 0; k < x.order(); ++k) {
    if (!x.has_tangent(k)) continue;
    Var dx = x.tangents[k];
    Var dcentered = tape.sub(dx, tape.broadcast_rows(tape.row_mean(dx), rows));
    Var dvar = tape.scale(tape.row_mean(tape.mul(centered, dcentered)), 2.0);
    if (!inv_std3.valid()) inv_std3 = tape.pow(var_eps, -1.5);
    Var dinv = tape.scale(tape.mul(inv_std3, dvar), -0.5);
    Var dnorm = tape.add(tape.mul(dcentered, inv_std_b), tape.mul(centered, tape.broadcast_rows(dinv, rows)));
    result.tangents[k] = tape.mul_col(dnorm, gain);
  }
  return result;
}

Jet inner_product(Tape& tape, Var branch, const Jet& trunk, Var b0) {
  Var v = tape.matmul_tn(branch, trunk.value);
  if (b0.valid()) v = tape.add_scalar(v, b0);
  return map_tangents(trunk, v, [&](Var t) { return tape.matmul_tn(branch, t); });
}

Jet row(Tape& tape, const Jet& x, Index r) {
  return map_tangents(x, tape.row(x.value, r), [&](Var t) { return tape.row(t, r); });
}

Jet broadcast_rows(Tape& tape, const Jet& x, Index rows) {
  return map_tangents(x, tape.broadcast_rows(x.value, rows),
                      [&](Var t) { return tape.broadcast_rows(t, rows); });
}

Jet cols(Tape& tape, const Jet& x, Index start, Index count) {
  return map_tangents(x, tape.cols(x.value, start, count),
                      [&](Var t) { return tape.cols(t, start, count); });
}

Jet gather_cols(Tape& tape, const Jet& x, const std::vector<Index>& indices) {
  return map_tangents(x, tape.gather_cols(x.value, indices),
                      [&](Var t) { return tape.gather_cols(t, indices); });
}

Jet group_moment(Tape& tape, const Jet& x, const Vector& weights) {
  return map_tangents(x, tape.group_moment(x.value, weights),
                      [&](Var t) { return tape.group_moment(t, weights); });
}

Jet group_broadcast(Tape& tape, const Jet& x, Index q) {
  return map_tangents(x, tape.group_broadcast(x.value, q),
                      [&](Var t) { return tape.group_broadcast(t, q); });
}

Jet mul_constant(Tape& tape, const Jet& x, Var constant) {
  return map_tangents(x, tape.mul(x.value, constant), [&](Var t) { return tape.mul(t, constant); });
}

}  // namespace apcon::ad
