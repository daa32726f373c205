#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "apcon/errors.hpp"
#include "apcon/refsolve.hpp"

namespace apcon {

namespace {

constexpr double kTail = 9.0;  // e^{-81} is far below double resolution of the result

double gaussian_average(const std::function<double(double)>& g, double x, double sigma, double tol) {
  auto integrand = [&](double s) { return std::exp(-s * s) * g(x + sigma * s); };
  double error = 0.0, l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -kTail, kTail, 20,
                                                                                     tol, &error, &l1);
  if (!(error <= tol * std::max(1.0, l1)))
    throw AccuracyError("heat convolution did not reach tolerance", error);
  return value / std::sqrt(std::numbers::pi);
}

}  // namespace

double heat_kernel(double t, double x, double k) {
  if (!(t > 0.0)) throw DomainError("heat kernel needs t > 0");
  if (!(k > 0.0)) throw DomainError("heat kernel needs k > 0");
  return std::exp(-x * x / (4.0 * k * t)) / std::sqrt(4.0 * std::numbers::pi * k * t);
}

std::vector<double> heat_convolution(const std::function<double(double)>& g, double t, double k,
                                     std::span<const double> x_eval, double tol) {
  if (!(t > 0.0)) throw DomainError("heat convolution needs t > 0");
  if (!(k > 0.0)) throw DomainError("heat convolution needs k > 0");
  const double sigma = std::sqrt(4.0 * k * t);
  std::vector<double> u;
  u.reserve(x_eval.size());
  for (double x : x_eval) u.push_back(gaussian_average(g, x, sigma, tol));
  return u;
}

std::vector<double> duhamel(const std::function<double(double)>& g, const std::function<double(double, double)>& f,
                            double t, double k, std::span<const double> x_eval, double tol) {
  std::vector<double> u = heat_convolution(g, t, k, x_eval, tol);
  for (std::size_t i = 0; i < x_eval.size(); ++i) {
    const double x = x_eval[i];
    auto inner = [&](double s) {
      const double lag = t - s;
      if (lag <= 0.0) return f(s, x);
      return gaussian_average([&](double y) { return f(s, y); }, x, std::sqrt(4.0 * k * lag), tol);
    };
    double error = 0.0, l1 = 0.0;
    const double v =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(inner, 0.0, t, 15, tol, &error, &l1);
    if (!(error <= tol * std::max(1.0, l1))) throw AccuracyError("Duhamel time integral did not reach tolerance", error);
    u[i] += v;
  }
  return u;
}

}  // namespace apcon
