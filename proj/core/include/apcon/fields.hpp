#pragma once

#include <vector>

#include "apcon/deeponet.hpp"
#include "apcon/quadrature.hpp"

namespace apcon {

/// How network outputs map to the kinetic unknowns.
///   PiDon:      f = σ₊(G)
///   MicroMacro: ρ = G_ρ(t,x),  g = G_g(t,x,v) − ⟨G_g⟩,          f = ρ + εg
///   EvenOdd:    ρ = G_ρ(t,x),  r = ½(G_r(v) + G_r(−v)),
///               j = G_j(v) − G_j(−v),                            f = r + εj
enum class Formulation { PiDon, MicroMacro, EvenOdd };

/// Non-owning view of the networks of one operator model.
struct FieldSet {
  Formulation formulation = Formulation::PiDon;
  /// PiDon: {f}; MicroMacro: {ρ, g}; EvenOdd: {ρ, r, j}.
  std::vector<const FieldNet*> nets;
  VelocityQuadrature quadrature;
  /// PiDon only: apply σ₊ to G. Off means f = G, used for manufactured fields.
  bool positive_wrap = true;

  /// Checks net count and query dimensions; throws ConfigError.
  void validate() const;
};

std::size_t expected_net_count(Formulation f);

}  // namespace apcon
