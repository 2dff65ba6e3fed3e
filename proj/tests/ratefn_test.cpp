#include "ldbranch/ratefn.hpp"
#include "test_support.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/tools/minima.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ldbranch;
using ldbranch::testing::slow_params;
using ldbranch::testing::steep_params;
using ldbranch::testing::sweep_params;

namespace {

// Lambda(theta) straight from its time-domain integral on [0, inf).
double cumulant_oracle(double theta, const ModelParams& p) {
  const double l1 = p.lambda1(), r = p.r();
  boost::math::quadrature::exp_sinh<double> q;
  const double integral = q.integrate([&](double s) { return std::exp(-r * s) / (std::exp(l1 * s) - theta); });
  return l1 * p.mutation.mu * theta / p.resistant.r1 * integral;
}

// r = l1 closed forms of the survivor integrals in q = r1 theta / l1.
double j_equal_rates(double q) { return q == 0.0 ? 1.0 : -std::log1p(-q) / q; }
double j2_equal_rates(double q, double l1) {
  return (1.0 / (1.0 - q) + (std::log1p(-q) + q) / (q * q)) / (l1 * l1);
}

double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (lo + hi);
    ((f(m) > 0.0) == (f(lo) > 0.0) ? lo : hi) = m;
  }
  return 0.5 * (lo + hi);
}

double grid_max(const std::function<double(double)>& f, double lo, double hi, int points) {
  double best = -kInfinity;
  for (int i = 0; i <= points; ++i) best = std::max(best, f(lo + (hi - lo) * i / points));
  return best;
}

}  // namespace

TEST(Cumulant, ExampleValue) {
  EXPECT_NEAR(CumulantLimit(steep_params()).value(0.5), 0.0077259, 1e-7);
}

TEST(Cumulant, SeriesAgreesWithQuadrature) {
  for (const auto& p : {steep_params(), slow_params(), sweep_params(1.3)}) {
    const CumulantLimit s(p, EvalMethod::series), q(p, EvalMethod::quadrature);
    for (double t : {0.01, 0.2, 0.5, 0.8, 0.95, 0.99}) {
      EXPECT_NEAR(s.value(t), q.value(t), 1e-10) << t;
      EXPECT_NEAR(s.prime(t), q.prime(t), 1e-10) << t;
      EXPECT_NEAR(s.double_prime(t), q.double_prime(t), 1e-9 * std::max(1.0, s.double_prime(t))) << t;
    }
  }
}

TEST(Cumulant, MatchesTimeDomainIntegral) {
  for (const auto& p : {steep_params(), slow_params()}) {
    const CumulantLimit c(p);
    for (double t : {0.1, 0.5, 0.9, 0.999}) EXPECT_NEAR(c.value(t), cumulant_oracle(t, p), 1e-9 * c.value(t)) << t;
  }
}

TEST(Cumulant, ShapeAndDerivatives) {
  const auto p = steep_params();
  const CumulantLimit c(p);
  EXPECT_EQ(c.value(0.0), 0.0);
  EXPECT_NEAR(c.prime(0.0), 0.01, 1e-15);
  EXPECT_NEAR(c.slope_at_zero(), 0.01, 1e-15);
  EXPECT_TRUE(std::isinf(c.value(1.0)));
  double prev_prime = 0.0;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const double h = 1e-5;
    EXPECT_NEAR((c.value(t + h) - c.value(t - h)) / (2 * h), c.prime(t), 1e-7 * c.prime(t)) << t;
    EXPECT_NEAR((c.prime(t + h) - c.prime(t - h)) / (2 * h), c.double_prime(t), 1e-6 * c.double_prime(t)) << t;
    EXPECT_GT(c.double_prime(t), 0.0);
    EXPECT_GT(c.prime(t), prev_prime);
    prev_prime = c.prime(t);
  }
  EXPECT_GT(c.prime(1.0 - 1e-6), 1e3 * c.prime(0.5));
}

TEST(Cumulant, Convex) {
  const CumulantLimit c(slow_params());
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 0.999);
  for (int i = 0; i < 200; ++i) {
    const double a = u(gen), b = u(gen), w = u(gen);
    EXPECT_LE(c.value(w * a + (1 - w) * b), w * c.value(a) + (1 - w) * c.value(b) + 1e-15);
  }
}

TEST(Legendre, TransformIdentities) {
  const CumulantLimit c(steep_params());
  const auto low = legendre(0.5 * c.slope_at_zero(), c);
  EXPECT_TRUE(low.at_boundary);
  EXPECT_EQ(low.value, 0.0);
  for (double t : {0.1, 0.5, 0.9}) {
    const double x = c.prime(t);
    const auto res = legendre(x, c);
    EXPECT_NEAR(res.theta_star, t, 1e-9);
    EXPECT_NEAR(res.value, t * x - c.value(t), 1e-12);
    EXPECT_NEAR(res.value, grid_max([&](double th) { return th * x - c.value(th); }, 0.0, 0.9999, 20000), 1e-6);
  }
}

TEST(RecurrenceRate, PreExistingExample) {
  const auto p = steep_params();
  const auto r = recurrence_rate(LdCase::pre_existing, 1.0, p);
  EXPECT_NEAR(r.theta_star, 0.75310, 1e-5);
  EXPECT_NEAR(r.value, 1.42833, 1e-5);
  EXPECT_NEAR(preexisting_theta_star(RateKind::recurrence, 1.0, p), 0.75310, 1e-5);
  // direct grid search of the objective
  const double g = std::exp(2.0);
  const double grid = grid_max([&](double t) { return t * 2.0 * g / 5.0 - std::log(1.0 + 2.0 * t / (5.0 * (1.0 - t))); },
                               0.0, 0.9999, 100000);
  EXPECT_NEAR(r.value, grid, 1e-6);
}

TEST(RecurrenceRate, AcquiredObjectiveExample) {
  const auto p = steep_params();
  const double obj = rate_objective(RateKind::recurrence, LdCase::acquired, 1.0, 0.5, p);
  EXPECT_NEAR(obj, 0.07389056 * 0.5 - 0.0077259, 1e-7);
  EXPECT_NEAR(obj, 0.0292194, 1e-7);
  EXPECT_GE(recurrence_rate(LdCase::acquired, 1.0, p).value, obj);
}

TEST(RecurrenceRate, MatchesGridSearch) {
  for (const auto& p : {steep_params(), slow_params()}) {
    const CumulantLimit c(p);
    for (auto kc : {LdCase::acquired, LdCase::critical}) {
      for (auto kind : {RateKind::recurrence, RateKind::crossover}) {
        const double got = detail::sup_rate(kind, kc, 0.8, p).value;
        const double grid = grid_max([&](double t) { return rate_objective(kind, kc, 0.8, t, p, c); }, 0.0, 0.9999, 20000);
        EXPECT_NEAR(got, grid, 1e-6 * std::max(1.0, got));
        EXPECT_GE(got + 1e-12, grid);
      }
    }
  }
}

TEST(RecurrenceRate, CriticalIsSumOfObjectives) {
  const auto p = slow_params();
  const CumulantLimit c(p);
  for (double y : {0.3, 1.0})
    for (double t : {0.1, 0.5, 0.9}) {
      for (auto kind : {RateKind::recurrence, RateKind::crossover}) {
        const double two = rate_objective(kind, LdCase::critical, y, t, p, c);
        const double sum = rate_objective(kind, LdCase::acquired, y, t, p, c) +
                           rate_objective(kind, LdCase::pre_existing, y, t, p, c);
        EXPECT_NEAR(two, sum, 1e-14);
      }
    }
}

TEST(RecurrenceRate, ZeroOffsetAndMonotone) {
  for (const auto& p : {steep_params(), slow_params()}) {
    for (auto kc : {LdCase::acquired, LdCase::critical, LdCase::pre_existing}) {
      EXPECT_NEAR(recurrence_rate(kc, 0.0, p).value, 0.0, 1e-12);
      EXPECT_NEAR(crossover_rate(kc, 0.0, p).value, 0.0, 1e-12);
      double prev = 0.0;
      for (double y : {0.1, 0.5, 1.0, 2.0}) {
        const double v = recurrence_rate(kc, y, p).value;
        EXPECT_GT(v, prev);
        EXPECT_GT(crossover_rate(kc, y, p).value, v);
        prev = v;
      }
    }
  }
  EXPECT_THROW(recurrence_rate(LdCase::acquired, -1.0, slow_params()), std::invalid_argument);
}

TEST(RecurrenceRate, LinearInMu) {
  auto p = slow_params();
  const double base = recurrence_rate(LdCase::acquired, 1.0, p).value;
  p.mutation.mu *= 2.0;
  EXPECT_NEAR(recurrence_rate(LdCase::acquired, 1.0, p).value, 2.0 * base, 1e-9 * base);
}

TEST(RecurrenceRate, DecreasingInBirthRate) {
  double prev = kInfinity;
  for (double r1 = 0.25; r1 < 2.0; r1 += 0.25) {
    const double v = recurrence_rate(LdCase::acquired, 1.0, sweep_params(r1)).value;
    EXPECT_LT(v, prev) << r1;
    prev = v;
  }
}

TEST(DecayRatio, Shape) {
  const auto p = steep_params();
  const double l1 = recurrence_rate(LdCase::acquired, 1.0, p).value;
  const double l3 = recurrence_rate(LdCase::pre_existing, 1.0, p).value;
  const auto rows = decay_ratio_curve(1.0, {0.1, 0.3, 0.5}, 100.0, p);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[2].ratio, l1 / l3, 1e-14);
  EXPECT_NEAR(rows[0].ratio, std::pow(100.0, -0.4) * l1 / l3, 1e-14);
  EXPECT_LT(rows[0].ratio, rows[1].ratio);
  EXPECT_LT(decay_ratio_curve(1.0, {0.1}, 1000.0, p)[0].ratio, rows[0].ratio);
  EXPECT_THROW(decay_ratio_curve(1.0, {0.6}, 100.0, p), std::invalid_argument);
}

TEST(Survivor, EqualRateClosedForms) {
  const auto p = slow_params();  // r = l1 = 0.2, r1 = 0.4
  for (auto method : {EvalMethod::series, EvalMethod::quadrature}) {
    const SurvivorIntegral s(p, method);
    EXPECT_NEAR(s.value(0.0), 1.0, 1e-15);
    EXPECT_NEAR(s.value(0.2), 1.277064, 1e-6);
    for (double q : {0.1, 0.4, 0.9, 0.99, 0.999, 1.0 - 1e-9}) {
      // the forced series is only meant for |q| <= 0.99
      if (method == EvalMethod::series && q > 0.99) continue;
      const double t = q * s.bound();
      EXPECT_NEAR(s.value(t), j_equal_rates(q), 1e-9 * j_equal_rates(q)) << q;
      EXPECT_NEAR(s.second(t), j2_equal_rates(q, 0.2), 1e-9 * j2_equal_rates(q, 0.2)) << q;
    }
    EXPECT_TRUE(std::isinf(s.value(s.bound())));
  }
}

TEST(Survivor, DerivativeRelation) {
  const SurvivorIntegral s(steep_params());
  for (double q : {0.2, 0.7}) {
    const double t = q * s.bound(), h = 1e-6;
    EXPECT_NEAR((s.value(t + h) - s.value(t - h)) / (2 * h), s.value_prime(t), 1e-6 * s.value_prime(t));
  }
}

TEST(ConditionedRate, VanishesAtMaximalFactor) {
  const auto p = slow_params();
  for (double y : {0.5, 1.0, 2.0}) {
    EXPECT_NEAR(conditioned_rate(y, std::exp(p.lambda1() * y), p).value, 0.0, 1e-10);
    EXPECT_GT(conditioned_rate(y, 1.0, p).value, 0.0);
  }
}

TEST(ConditionedRate, MatchesGridSearch) {
  const auto p = slow_params();
  const SurvivorIntegral s(p);
  for (double a : {0.5, 1.0, 1.1}) {
    const double got = conditioned_rate(1.0, a, p).value;
    const double grid =
        grid_max([&](double t) { return conditioned_objective(1.0, a, t, p, s); }, 0.0, s.bound() * 0.99999, 20000);
    EXPECT_NEAR(got, grid, 1e-7);
  }
}

TEST(ConditionedRate, DomainErrors) {
  const auto p = slow_params();
  EXPECT_THROW(conditioned_rate(1.0, 0.0, p), std::domain_error);
  EXPECT_THROW(conditioned_rate(1.0, std::exp(0.2) * 1.01, p), std::domain_error);
  EXPECT_THROW(conditioned_rate(-1.0, 1.0, p), std::invalid_argument);
  EXPECT_THROW(clone_number_cost(0.0, p), std::invalid_argument);
}

TEST(CloneNumberCost, PoissonShape) {
  const auto p = slow_params();
  EXPECT_EQ(clone_number_cost(1.0, p), 0.0);
  EXPECT_NEAR(clone_number_cost(2.0, p), 0.25 * (2.0 * std::log(2.0) - 1.0), 1e-15);
  EXPECT_GT(clone_number_cost(0.5, p), 0.0);
}

TEST(CloneOptimum, EqualRateReference) {
  const auto p = slow_params();
  const double target = std::exp(0.2);
  const double q1 = bisect([&](double q) { return j_equal_rates(q) - target; }, 1e-12, 1.0 - 1e-12);
  const double q2 = bisect([&](double q) { return 0.2 * 0.4 * j2_equal_rates(q, 0.2) - target; }, 1e-12, 1.0 - 1e-12);
  const auto o = optimal_clone_factor(1.0, p);
  EXPECT_NEAR(o.theta1, q1 * 0.5, 1e-9);
  EXPECT_NEAR(o.theta2, q2 * 0.5, 1e-9);
  EXPECT_NEAR(o.a_star_star, std::min(j_equal_rates(q2), target), 1e-9);
  EXPECT_NEAR(o.theta1, 0.169593, 1e-6);
  EXPECT_NEAR(o.theta2, 0.070053, 1e-6);
  EXPECT_NEAR(o.a_star_star, 1.077371, 1e-6);
}

TEST(CloneOptimum, IncreasingInOffset) {
  const auto p = slow_params();
  const double expected[] = {1.0381, 1.0774, 1.1179, 1.1596, 1.2026, 1.2468};
  double prev = 1.0;
  for (int i = 0; i < 6; ++i) {
    const double y = 0.5 * (i + 1);
    const auto o = optimal_clone_factor(y, p);
    EXPECT_NEAR(o.a_star_star, expected[i], 1e-4) << y;
    EXPECT_GT(o.a_star_star, prev);
    EXPECT_LE(o.a_star_star, std::exp(0.2 * y));
    prev = o.a_star_star;
  }
}

TEST(CloneOptimum, OrderingOnRandomParameters) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int i = 0; i < 30; ++i) {
    ModelParams p;
    p.sensitive = {u(gen), 0.0};
    p.sensitive.d0 = p.sensitive.r0 + u(gen);
    p.resistant = {0.0, u(gen)};
    p.resistant.r1 = p.resistant.d1 + u(gen);
    p.mutation.mu = u(gen);
    const double y = 2.0 * u(gen);
    const auto o = optimal_clone_factor(y, p);
    EXPECT_LT(o.theta2, o.theta1);
    EXPECT_GT(o.a_star_star, 1.0);
  }
}

TEST(CloneOptimum, MinimizesTotalCost) {
  const auto p = slow_params();
  const double y = 1.0;
  const double amax = std::exp(p.lambda1() * y);
  const auto best = boost::math::tools::brent_find_minima(
      [&](double a) { return conditioned_rate(y, a, p).value + clone_number_cost(a, p); }, 0.5, amax, 40);
  const auto o = optimal_clone_factor(y, p);
  EXPECT_NEAR(best.first, o.a_star_star, 1e-4);
  EXPECT_NEAR(best.second, o.objective_value, 1e-9);
  // the minimum total cost is the unconditioned recurrence rate
  EXPECT_NEAR(o.objective_value, recurrence_rate(LdCase::acquired, y, p).value, 1e-7);
}
