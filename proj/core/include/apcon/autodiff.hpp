#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "apcon/jet.hpp"
#include "apcon/parameter_vector.hpp"
#include "apcon/tape.hpp"

namespace apcon::ad {

struct InputPoint {
  std::vector<double> coords;
  /// Coordinate positions to differentiate with respect to.
  std::vector<Index> wrt;
};

struct GradientRecord {
  double value = 0.0;
  std::map<Index, double> input_partials;
  std::optional<std::vector<double>> param_gradient;
};

/// A differentiable scalar function of a coordinate column, built from tape
/// primitives. Must return a 1x1 jet.
using NetForward = std::function<Jet(Tape&, const Jet&)>;

/// A scalar loss recorded on a tape bound to the parameter vector.
using LossFn = std::function<Var(Tape&)>;

struct LossGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

GradientRecord eval_with_input_partials(const NetForward& net_forward, const ParameterVector* params,
                                        const InputPoint& point, bool with_param_gradient = false);

/// Loss value and ∂loss/∂θ. Throws NumericError naming the first segment
/// whose gradient is non-finite when the loss is not finite.
LossGradient grad_loss(const LossFn& loss_fn, const ParameterVector& params);

/// |a − b| / max(|a|, |b|, floor); zero when both vanish.
double relative_difference(double a, double b, double floor = 1e-12);

/// Max over coordinates of the relative error between the engine derivative
/// and the central difference (f(x+h e_i) − f(x−h e_i)) / 2h.
double fd_check(const NetForward& f, std::span<const double> x, double h,
                const ParameterVector* params = nullptr, double floor = 1e-12);

/// Same comparison for parameter-gradient entries of a loss.
double fd_check_parameters(const LossFn& loss_fn, ParameterVector params,
                           std::span<const std::size_t> positions, double h, double floor = 1e-12);

}  // namespace apcon::ad
