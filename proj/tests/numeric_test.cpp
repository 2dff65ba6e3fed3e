#include "ldbranch/numeric.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace ldbranch::numeric;

TEST(Integrate, Polynomial) {
  EXPECT_NEAR(integrate([](double x) { return x * x; }, 0.0, 3.0), 9.0, 1e-12);
  EXPECT_EQ(integrate([](double) { return 1.0; }, 2.0, 2.0), 0.0);
}

TEST(Integrate, Oscillatory) {
  EXPECT_NEAR(integrate([](double x) { return std::sin(x); }, 0.0, M_PI), 2.0, 1e-12);
  EXPECT_NEAR(integrate([](double x) { return std::cos(50.0 * x); }, 0.0, 1.0), std::sin(50.0) / 50.0, 1e-12);
}

TEST(Integrate, IntegrableEndpointSingularity) {
  // int_0^1 x^-1/2 dx = 2
  QuadratureOptions opt;
  opt.abs_tol = 1e-8;
  EXPECT_NEAR(integrate([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0, opt), 2.0, 1e-6);
}

TEST(Integrate, LogKernelNearPole) {
  // int_0^q dx / (1 - x) = -log(1 - q)
  for (double q : {0.5, 0.99, 1.0 - 1e-6, 1.0 - 1e-12}) {
    const double got = integrate_graded([](double x) { return 1.0 / (1.0 - x); }, 0.0, q, 1.0 - q);
    // 1 - x itself carries a relative rounding error of eps / (1 - q)
    const double tol = std::max(1e-10, 1e-3 * std::numeric_limits<double>::epsilon() / (1.0 - q));
    EXPECT_NEAR(got, -std::log1p(-q), tol * std::max(1.0, -std::log1p(-q))) << q;
  }
}

TEST(FindRoot, Simple) {
  const auto r = find_root([](double x) { return x * x - 2.0; }, 0.0, 2.0);
  EXPECT_NEAR(r.x, std::sqrt(2.0), 1e-11);
  const auto c = find_root([](double x) { return std::cos(x) - x; }, 0.0, 1.0);
  EXPECT_NEAR(c.x, 0.7390851332151607, 1e-11);
}

TEST(FindRoot, EndpointRoot) {
  EXPECT_EQ(find_root([](double x) { return x - 1.0; }, 1.0, 3.0).x, 1.0);
}

TEST(FindRoot, UnbracketedThrows) {
  EXPECT_THROW(find_root([](double x) { return x * x + 1.0; }, -1.0, 1.0), BracketError);
  EXPECT_THROW(find_root([](double x) { return x; }, 1.0, -1.0), BracketError);
}

TEST(MaximizeConcave, Interior) {
  const auto m = maximize_concave([](double x) { return -(x - 0.3) * (x - 0.3); },
                                  [](double x) { return -2.0 * (x - 0.3); }, 0.0, 1.0);
  EXPECT_NEAR(m.x, 0.3, 1e-9);
  EXPECT_NEAR(m.value, 0.0, 1e-15);
}

TEST(MaximizeConcave, LogObjective) {
  // max of log(x) - x at x = 1
  const auto m = maximize_concave([](double x) { return std::log(x) - x; }, [](double x) { return 1.0 / x - 1.0; },
                                  0.01, 5.0);
  EXPECT_NEAR(m.x, 1.0, 1e-9);
  EXPECT_NEAR(m.value, -1.0, 1e-14);
}

TEST(MaximizeConcave, MonotoneReturnsBoundary) {
  const auto m = maximize_concave([](double x) { return x; }, [](double) { return 1.0; }, 0.0, 2.0);
  EXPECT_EQ(m.x, 2.0);
  EXPECT_EQ(m.value, 2.0);
}
