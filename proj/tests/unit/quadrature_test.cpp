#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "apcon/errors.hpp"
#include "apcon/quadrature.hpp"

using namespace apcon;

TEST(GaussLegendre, HalfMomentsOfMonomialsAreExact) {
  for (int n : {2, 4, 8, 16, 32}) {
    const auto q = gauss_legendre(n);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      std::vector<double> f;
      for (double v : q.nodes()) f.push_back(std::pow(v, k));
      // ½∫ v^k dv over [-1, 1]
      const double exact = k % 2 == 0 ? 1.0 / (k + 1) : 0.0;
      EXPECT_NEAR(moment(q, f), exact, 1e-14) << "n " << n << " k " << k;
    }
  }
}

TEST(GaussLegendre, NotExactBeyondDegree) {
  const auto q = gauss_legendre(4);
  std::vector<double> f;
  for (double v : q.nodes()) f.push_back(std::pow(v, 8));
  EXPECT_GT(std::abs(moment(q, f) - 1.0 / 9.0), 1e-4);
}

TEST(GaussLegendre, SymmetricSortedAndNormalised) {
  const auto q = gauss_legendre(32);
  EXPECT_TRUE(q.symmetric());
  EXPECT_TRUE(std::is_sorted(q.nodes().begin(), q.nodes().end()));
  EXPECT_NEAR(std::accumulate(q.weights().begin(), q.weights().end(), 0.0), 1.0, 1e-15);
  for (std::size_t k = 0; k < q.size(); ++k) EXPECT_EQ(q.nodes()[k], -q.nodes()[q.mirror(k)]);
}

TEST(GaussLegendre, TwoPointRuleNodes) {
  const auto q = gauss_legendre(2);
  EXPECT_NEAR(q.nodes()[1], 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(q.weights()[0], 0.5, 1e-15);
}

TEST(GaussLegendre, OddOrSmallOrderRejected) {
  EXPECT_THROW(gauss_legendre(3), ConfigError);
  EXPECT_THROW(gauss_legendre(0), ConfigError);
}

TEST(Collision, AnnihilatesConstantsAndHasZeroMean) {
  const auto q = gauss_legendre(8);
  std::vector<double> c(q.size(), 2.5);
  for (double x : collision(q, c)) EXPECT_NEAR(x, 0.0, 1e-15);
  std::vector<double> f;
  for (double v : q.nodes()) f.push_back(std::exp(v) + v * v);
  EXPECT_NEAR(moment(q, collision(q, f)), 0.0, 1e-15);
  const auto p = project_out_mean(q, f);
  const auto l = collision(q, f);
  for (std::size_t k = 0; k < q.size(); ++k) EXPECT_DOUBLE_EQ(p[k], -l[k]);
}

TEST(Collision, LengthMismatchIsShapeError) {
  const auto q = gauss_legendre(4);
  std::vector<double> f(3, 1.0);
  EXPECT_THROW(moment(q, f), ShapeError);
}
