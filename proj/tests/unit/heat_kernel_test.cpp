#include <cmath>

#include <gtest/gtest.h>

#include "apcon/errors.hpp"
#include "apcon/refsolve.hpp"

using namespace apcon;

TEST(HeatKernel, PointValues) {
  EXPECT_NEAR(heat_kernel(1.0, 0.0, 1.0 / (4 * M_PI)), 1.0, 1e-15);
  EXPECT_NEAR(heat_kernel(0.5, 1.0, 0.5), std::exp(-1.0) / std::sqrt(M_PI), 1e-15);
  EXPECT_THROW(heat_kernel(0.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(heat_kernel(1.0, 0.0, -1.0), DomainError);
}

TEST(HeatKernel, GaussianConvolutionClosedForm) {
  const double s = 0.3, k = 1.0 / 3.0, t = 0.2;
  const std::vector<double> xs{-1.0, -0.2, 0.0, 0.45, 2.0};
  const auto u = heat_convolution([&](double y) { return std::exp(-y * y / (2 * s * s)); }, t, k, xs);
  const double var = s * s + 2 * k * t;
  for (std::size_t i = 0; i < xs.size(); ++i)
    EXPECT_NEAR(u[i], s / std::sqrt(var) * std::exp(-xs[i] * xs[i] / (2 * var)), 1e-10);
}

TEST(HeatKernel, Semigroup) {
  const double k = 0.7, t = 0.15, s = 0.4;
  const std::vector<double> xs{0.0, 0.3, -1.1};
  const auto u = heat_convolution([&](double y) { return heat_kernel(s, y, k); }, t, k, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(u[i], heat_kernel(t + s, xs[i], k), 1e-10);
}

TEST(HeatKernel, PolynomialDataEvolvesExactly) {
  // u₀ = x²: u = x² + 2kt.
  const double k = 1.0 / 3.0, t = 0.1;
  const std::vector<double> xs{0.0, 0.5, 1.0};
  const auto u = heat_convolution([](double y) { return y * y; }, t, k, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(u[i], xs[i] * xs[i] + 2 * k * t, 1e-10);
}

TEST(Duhamel, ConstantSource) {
  const double c = 2.5, t = 0.3, k = 1.0 / 3.0;
  const std::vector<double> xs{0.1, 0.9};
  const auto u = duhamel([](double) { return 1.0; }, [&](double, double) { return c; }, t, k, xs);
  for (double v : u) EXPECT_NEAR(v, 1.0 + c * t, 1e-9);
}

TEST(Duhamel, QuadraticSource) {
  // g = 0, f = y²: u = ∫₀ᵗ (x² + 2k(t − s)) ds = x² t + k t².
  const double t = 0.2, k = 0.5;
  const std::vector<double> xs{0.0, 0.7};
  const auto u = duhamel([](double) { return 0.0; }, [](double, double y) { return y * y; }, t, k, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(u[i], xs[i] * xs[i] * t + k * t * t, 1e-9);
}

TEST(Duhamel, TimeDependentSource) {
  // f = s: u = t²/2.
  const auto u = duhamel([](double) { return 0.0; }, [](double s, double) { return s; }, 0.4, 1.0, std::vector<double>{0.3});
  EXPECT_NEAR(u[0], 0.08, 1e-9);
}

TEST(Duhamel, DomainErrors) {
  EXPECT_THROW(heat_convolution([](double) { return 1.0; }, 0.0, 1.0, std::vector<double>{0.0}), DomainError);
}
