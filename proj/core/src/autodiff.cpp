#include "apcon/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "apcon/errors.hpp"

namespace apcon::ad {

namespace {

Matrix column(std::span<const double> x) {
  Matrix m(static_cast<Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) m(static_cast<Index>(i), 0) = x[i];
  return m;
}

double evaluate_value(const NetForward& f, const ParameterVector* params, const Matrix& x) {
  Tape tape(params);
  Jet in{tape.constant(x), {}};
  return tape.scalar(f(tape, in).value);
}

double evaluate_loss(const LossFn& loss_fn, const ParameterVector& params) {
  Tape tape(&params);
  return tape.scalar(loss_fn(tape));
}

}  // namespace

GradientRecord eval_with_input_partials(const NetForward& net_forward, const ParameterVector* params,
                                        const InputPoint& point, bool with_param_gradient) {
  Tape tape(params);
  Jet in = seed_coordinates(tape, column(point.coords), point.wrt);
  Jet out = net_forward(tape, in);
  GradientRecord rec;
  rec.value = tape.scalar(out.value);
  for (std::size_t k = 0; k < point.wrt.size(); ++k)
    rec.input_partials[point.wrt[k]] = out.has_tangent(k) ? tape.scalar(out.tangents[k]) : 0.0;
  if (with_param_gradient && params) {
    tape.backward(out.value);
    std::vector<double> g(params->size(), 0.0);
    tape.accumulate_parameter_gradient(g);
    rec.param_gradient = std::move(g);
  }
  return rec;
}

LossGradient grad_loss(const LossFn& loss_fn, const ParameterVector& params) {
  Tape tape(&params);
  Var loss = loss_fn(tape);
  LossGradient out;
  out.value = tape.scalar(loss);
  out.gradient.assign(params.size(), 0.0);
  tape.backward(loss);
  tape.accumulate_parameter_gradient(out.gradient);
  const bool finite_grad = std::all_of(out.gradient.begin(), out.gradient.end(),
                                       [](double g) { return std::isfinite(g); });
  if (!std::isfinite(out.value) || !finite_grad) {
    for (std::size_t i = 0; i < out.gradient.size(); ++i)
      if (!std::isfinite(out.gradient[i]))
        throw NumericError("non-finite loss: gradient first non-finite in segment '" +
                           params.segment_name_at(i) + "'");
    throw NumericError("non-finite loss value (" + std::to_string(out.value) +
                       ") with finite gradients; segment '" +
                       (params.segment_count() ? params.segment(0).name : std::string("<none>")) + "'");
  }
  return out;
}

double relative_difference(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  if (denom == 0.0) return 0.0;
  return std::abs(a - b) / denom;
}

double fd_check(const NetForward& f, std::span<const double> x, double h, const ParameterVector* params,
                double floor) {
  if (!(h > 0)) throw ConfigError("fd_check: step must be positive");
  InputPoint p{std::vector<double>(x.begin(), x.end()), {}};
  for (std::size_t i = 0; i < x.size(); ++i) p.wrt.push_back(static_cast<Index>(i));
  GradientRecord rec = eval_with_input_partials(f, params, p);
  double worst = 0.0;
  Matrix base = column(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix xp = base, xm = base;
    xp(static_cast<Index>(i), 0) += h;
    xm(static_cast<Index>(i), 0) -= h;
    const double fd = (evaluate_value(f, params, xp) - evaluate_value(f, params, xm)) / (2.0 * h);
    worst = std::max(worst, relative_difference(rec.input_partials.at(static_cast<Index>(i)), fd, floor));
  }
  return worst;
}

double fd_check_parameters(const LossFn& loss_fn, ParameterVector params,
                           std::span<const std::size_t> positions, double h, double floor) {
  if (!(h > 0)) throw ConfigError("fd_check_parameters: step must be positive");
  LossGradient lg = grad_loss(loss_fn, params);
  double worst = 0.0;
  for (std::size_t pos : positions) {
    if (pos >= params.size()) throw ShapeError("fd_check_parameters: position out of range");
    const double saved = params.values()[pos];
    params.values()[pos] = saved + h;
    const double fp = evaluate_loss(loss_fn, params);
    params.values()[pos] = saved - h;
    const double fm = evaluate_loss(loss_fn, params);
    params.values()[pos] = saved;
    worst = std::max(worst, relative_difference(lg.gradient[pos], (fp - fm) / (2.0 * h), floor));
  }
  return worst;
}

}  // namespace apcon::ad
