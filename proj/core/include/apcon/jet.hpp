#pragma once

// Forward-mode input partials recorded on a Tape.
//
// A Jet carries a value node and one tangent node per differentiated input
// coordinate. An invalid tangent Var stands for a structurally zero tangent
// and is never materialised. Because the tangents are ordinary tape nodes,
// reverse accumulation through them yields parameter gradients of losses
// that contain input partials.

#include <vector>

#include "apcon/tape.hpp"

namespace apcon::ad {

struct Jet {
  Var value;
  std::vector<Var> tangents;

  std::size_t order() const { return tangents.size(); }
  bool has_tangent(std::size_t k) const { return k < tangents.size() && tangents[k].valid(); }
};

/// Leaf jet from raw coordinates (rows = coordinates, cols = points). Tangent k
/// seeds the unit direction along coordinate wrt[k].
Jet seed_coordinates(Tape& tape, const Matrix& coords, const std::vector<Index>& wrt);

/// A jet with no tangents but the requested tangent count (all zero).
Jet lift(Var value, std::size_t tangents);

/// Dense tangent, materialising zeros when structurally absent.
Var tangent_or_zero(Tape& tape, const Jet& j, std::size_t k);

Jet affine(Tape& tape, Var weight, Var bias, const Jet& x);
Jet activation(Tape& tape, const Jet& x, Activation kind);
Jet add(Tape& tape, const Jet& a, const Jet& b);
Jet sub(Tape& tape, const Jet& a, const Jet& b);
Jet mul(Tape& tape, const Jet& a, const Jet& b);
Jet scale(Tape& tape, const Jet& a, double s);
Jet shift(Tape& tape, const Jet& a, double s);
/// Row-wise layer normalisation over features with affine gain/bias.
Jet layer_norm(Tape& tape, const Jet& x, Var gain, Var bias, double eps);
/// branchᵀ · trunk + b0; branch has no input dependence.
Jet inner_product(Tape& tape, Var branch, const Jet& trunk, Var b0);
Jet row(Tape& tape, const Jet& x, Index r);
Jet broadcast_rows(Tape& tape, const Jet& x, Index rows);
Jet cols(Tape& tape, const Jet& x, Index start, Index count);
Jet gather_cols(Tape& tape, const Jet& x, const std::vector<Index>& indices);
Jet group_moment(Tape& tape, const Jet& x, const Vector& weights);
Jet group_broadcast(Tape& tape, const Jet& x, Index q);
/// Elementwise product with a constant matrix.
Jet mul_constant(Tape& tape, const Jet& x, Var constant);

}  // namespace apcon::ad
