#pragma once

// Large-deviation rate functions for early recurrence and early crossover,
// the limiting cumulant that drives them, and the clone-conditioned
// optimization for the most likely number of surviving clones.

#include "ldbranch/numeric.hpp"
#include "ldbranch/params.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldbranch {

enum class EvalMethod { automatic, series, quadrature };

namespace detail {

// sum_{k>=0} x^k g(k). Stops once the geometric tail bound of the next term
// drops below 1e-14 of the partial sum; hard cap of 1e6 terms.
template <class G>
double power_series(double x, G&& g) {
  double sum = 0.0;
  double xk = 1.0;
  const double tail_factor = 1.0 / (1.0 - std::abs(x));
  for (std::uint64_t k = 0; k < 1000000; ++k) {
    const double term = xk * g(static_cast<double>(k));
    sum += term;
    if (k > 0 && std::abs(term) * tail_factor < 1e-14 * std::abs(sum)) break;
    if (xk == 0.0) break;
    xk *= x;
  }
  return sum;
}

inline bool use_series(EvalMethod m, double x) {
  if (m == EvalMethod::series) return true;
  if (m == EvalMethod::quadrature) return false;
  return std::abs(x) <= 0.99;
}

}  // namespace detail

// Limit of the scaled log-MGF of the normalized mutant mass,
//   Lambda(theta) = (l1 mu theta / r1) int_0^inf e^{-rs} / (e^{l1 s} - theta) ds,
// finite for theta < 1.
class CumulantLimit {
 public:
  explicit CumulantLimit(const ModelParams& p, EvalMethod method = EvalMethod::automatic)
      : l1_(p.lambda1()), r_(p.r()), mu_(p.mutation.mu), r1_(p.resistant.r1), method_(method) {}

  double value(double theta) const {
    if (theta >= 1.0) return kInfinity;
    if (theta == 0.0) return 0.0;
    if (detail::use_series(method_, theta)) {
      const double s = detail::power_series(theta, [&](double k) { return 1.0 / (r_ + (k + 1.0) * l1_); });
      return l1_ * mu_ * theta / r1_ * s;
    }
    const double rho = r_ / l1_;
    return mu_ * theta / r1_ *
           numeric::integrate_graded([&](double x) { return std::pow(x, rho) / (1.0 - theta * x); }, 0.0, 1.0,
                                   1.0 - theta);
  }

  double prime(double theta) const {
    if (theta >= 1.0) return kInfinity;
    if (detail::use_series(method_, theta)) {
      const double s =
          detail::power_series(theta, [&](double k) { return (k + 1.0) / (r_ + (k + 1.0) * l1_); });
      return l1_ * mu_ / r1_ * s;
    }
    const double rho = r_ / l1_;
    return mu_ / r1_ * numeric::integrate_graded(
                           [&](double x) {
                             const double d = 1.0 - theta * x;
                             return std::pow(x, rho) / (d * d);
                           },
                           0.0, 1.0, 1.0 - theta);
  }

  double double_prime(double theta) const {
    if (theta >= 1.0) return kInfinity;
    if (detail::use_series(method_, theta)) {
      const double s = detail::power_series(
          theta, [&](double k) { return (k + 2.0) * (k + 1.0) / (r_ + (k + 2.0) * l1_); });
      return l1_ * mu_ / r1_ * s;
    }
    const double rho = r_ / l1_;
    return 2.0 * mu_ / r1_ * numeric::integrate_graded(
                                 [&](double x) {
                                   const double d = 1.0 - theta * x;
                                   return std::pow(x, rho + 1.0) / (d * d * d);
                                 },
                                 0.0, 1.0, 1.0 - theta);
  }

  // Lambda'(0) = l1 mu / ((l1 + r) r1)
  double slope_at_zero() const { return l1_ * mu_ / ((l1_ + r_) * r1_); }

 private:
  double l1_, r_, mu_, r1_;
  EvalMethod method_;
};

struct LegendreResult {
  double value = 0.0;
  double theta_star = 0.0;
  bool at_boundary = false;  // x <= Lambda'(0): infimum attained at theta = 0
  int iterations = 0;
};

// Lambda*(x) = sup_theta [theta x - Lambda(theta)], maximizer theta*(x) = Lambda'^{-1}(x).
inline LegendreResult legendre(double x, const CumulantLimit& cumulant) {
  if (x <= cumulant.slope_at_zero()) return {0.0, 0.0, true, 0};
  double delta = 1e-3;
  while (cumulant.prime(1.0 - delta) <= x) {
    delta *= 1e-2;
    if (delta < 1e-15) throw numeric::BracketError("legendre: slope beyond numerical reach");
  }
  const auto root = numeric::find_root([&](double t) { return cumulant.prime(t) - x; }, 0.0, 1.0 - delta);
  const double th = root.x;
  return {x * th - cumulant.value(th), th, false, root.iterations};
}

enum class RateKind { recurrence, crossover, conditioned };

inline const char* rate_kind_name(RateKind k) {
  switch (k) {
    case RateKind::recurrence: return "recurrence";
    case RateKind::crossover: return "crossover";
    case RateKind::conditioned: return "conditioned";
  }
  return "?";
}

struct RateResult {
  double value = 0.0;
  double theta_star = 0.0;
  int iterations = 0;
  RateKind kind = RateKind::recurrence;
  LdCase case_tag = LdCase::acquired;
};

namespace detail {

inline constexpr double kEdge = 1e-9;

// Exponential factor of the early offset: e^{l1 y} for recurrence,
// e^{(l1 + r) y} for crossover.
inline double early_growth(RateKind kind, double y, const ModelParams& p) {
  const double rate = kind == RateKind::crossover ? p.lambda1() + p.r() : p.lambda1();
  return std::exp(rate * y);
}

// -log(1 - (l1/r1) theta/(theta - 1)), the pre-existing mutant cumulant
inline double preexisting_log_term(double theta, const ResistantRates& m) {
  return std::log1p(m.lambda1() * theta / (m.r1 * (1.0 - theta)));
}

inline double preexisting_log_term_prime(double theta, const ResistantRates& m) {
  return 1.0 / (1.0 - theta) - m.d1 / (m.r1 - m.d1 * theta);
}

}  // namespace detail

// The bracketed expression under the supremum for recurrence or crossover.
inline double rate_objective(RateKind kind, LdCase c, double y, double theta, const ModelParams& p,
                             const CumulantLimit& cumulant) {
  if (kind == RateKind::conditioned) throw std::invalid_argument("rate_objective: use conditioned_objective");
  const double g = detail::early_growth(kind, y, p);
  const double l1 = p.lambda1();
  const double r1 = p.resistant.r1;
  switch (c) {
    case LdCase::acquired:
      return theta * cumulant.slope_at_zero() * g - cumulant.value(theta);
    case LdCase::critical:
      return theta * l1 * (p.mutation.mu + l1 + p.r()) * g / (r1 * (l1 + p.r())) -
             detail::preexisting_log_term(theta, p.resistant) - cumulant.value(theta);
    case LdCase::pre_existing:
      return theta * l1 * g / r1 - detail::preexisting_log_term(theta, p.resistant);
  }
  return 0.0;
}

inline double rate_objective(RateKind kind, LdCase c, double y, double theta, const ModelParams& p) {
  return rate_objective(kind, c, y, theta, p, CumulantLimit(p));
}

inline double rate_objective_prime(RateKind kind, LdCase c, double y, double theta, const ModelParams& p,
                                   const CumulantLimit& cumulant) {
  const double g = detail::early_growth(kind, y, p);
  const double l1 = p.lambda1();
  const double r1 = p.resistant.r1;
  switch (c) {
    case LdCase::acquired:
      return cumulant.slope_at_zero() * g - cumulant.prime(theta);
    case LdCase::critical:
      return l1 * (p.mutation.mu + l1 + p.r()) * g / (r1 * (l1 + p.r())) -
             detail::preexisting_log_term_prime(theta, p.resistant) - cumulant.prime(theta);
    case LdCase::pre_existing:
      return l1 * g / r1 - detail::preexisting_log_term_prime(theta, p.resistant);
  }
  return 0.0;
}

namespace detail {

inline RateResult sup_rate(RateKind kind, LdCase c, double y, const ModelParams& p) {
  if (!(y >= 0.0)) throw std::invalid_argument("rate function requires y >= 0");
  const CumulantLimit cumulant(p);
  const auto best = numeric::maximize_concave(
      [&](double t) { return rate_objective(kind, c, y, t, p, cumulant); },
      [&](double t) { return rate_objective_prime(kind, c, y, t, p, cumulant); }, kEdge, 1.0 - kEdge);
  return {std::max(0.0, best.value), best.x, best.iterations, kind, c};
}

}  // namespace detail

// Decay rate L(y) of P(gamma_n(a) <= zeta_n(a) - y) on the speed n^(1-alpha)
// (cases 1, 2) or n^(1-beta) (case 3).
inline RateResult recurrence_rate(LdCase c, double y, const ModelParams& p) {
  return detail::sup_rate(RateKind::recurrence, c, y, p);
}

// Same structure with e^{l1 y} replaced by e^{(l1 + r) y}. Cases 2 and 3 are
// evaluated from their stated formulas.
inline RateResult crossover_rate(LdCase c, double y, const ModelParams& p) {
  return detail::sup_rate(RateKind::crossover, c, y, p);
}

// Maximizer of the case-3 objective in closed form,
// (r1 + d1 - sqrt(l1^2 + 4 r1 d1 / G)) / (2 d1) with G the early growth
// factor, written in a form that stays finite as d1 -> 0.
inline double preexisting_theta_star(RateKind kind, double y, const ModelParams& p) {
  const double g = detail::early_growth(kind, y, p);
  const auto& m = p.resistant;
  const double l1 = m.lambda1();
  const double disc = l1 * l1 + 4.0 * m.r1 * m.d1 / g;
  return 2.0 * m.r1 * (1.0 - 1.0 / g) / ((m.r1 + m.d1) + std::sqrt(disc));
}

struct DecayRatioRow {
  double beta = 0.0;
  double ratio = 0.0;
};

// n^{beta - alpha} L1(y) / L3(y) for each beta in (0, alpha].
inline std::vector<DecayRatioRow> decay_ratio_curve(double y, const std::vector<double>& betas, double n,
                                                    const ModelParams& p) {
  const double l1 = recurrence_rate(LdCase::acquired, y, p).value;
  const double l3 = recurrence_rate(LdCase::pre_existing, y, p).value;
  std::vector<DecayRatioRow> out;
  out.reserve(betas.size());
  for (double b : betas) {
    if (!(b > 0.0 && b <= p.mutation.alpha))
      throw std::invalid_argument("decay_ratio_curve: beta must lie in (0, alpha]");
    out.push_back({b, std::exp((b - p.mutation.alpha) * std::log(n)) * l1 / l3});
  }
  return out;
}

// J(theta)  = r int_0^inf l1 e^{l1 s} / (l1 e^{l1 s} - r1 theta) e^{-rs} ds
// J2(theta) =   int_0^inf l1 e^{l1 s} / (l1 e^{l1 s} - r1 theta)^2 e^{-rs} ds
// both finite for 0 <= theta < l1 / r1.
class SurvivorIntegral {
 public:
  explicit SurvivorIntegral(const ModelParams& p, EvalMethod method = EvalMethod::automatic)
      : l1_(p.lambda1()), r_(p.r()), r1_(p.resistant.r1), method_(method) {}

  double bound() const { return l1_ / r1_; }

  double value(double theta) const {
    const double q = r1_ * theta / l1_;
    if (q >= 1.0) return kInfinity;
    if (detail::use_series(method_, q))
      return detail::power_series(q, [&](double k) { return r_ / (r_ + k * l1_); });
    const double e = l1_ / r_;
    return numeric::integrate_graded([&](double x) { return 1.0 / (1.0 - q * std::pow(x, e)); }, 0.0, 1.0,
                                     1.0 - q);
  }

  double second(double theta) const {
    const double q = r1_ * theta / l1_;
    if (q >= 1.0) return kInfinity;
    if (detail::use_series(method_, q))
      return detail::power_series(q, [&](double k) { return (k + 1.0) / ((k + 1.0) * l1_ + r_); }) / l1_;
    const double e = l1_ / r_;
    return numeric::integrate_graded(
               [&](double x) {
                 const double xe = std::pow(x, e);
                 const double d = 1.0 - q * xe;
                 return xe / (d * d);
               },
               0.0, 1.0, 1.0 - q) /
           (l1_ * r_);
  }

  // dJ/dtheta = r r1 J2
  double value_prime(double theta) const { return r_ * r1_ * second(theta); }

 private:
  double l1_, r_, r1_;
  EvalMethod method_;
};

// Mean clone count prefactor l1 mu / (r r1).
inline double clone_count_scale(const ModelParams& p) {
  return p.lambda1() * p.mutation.mu / (p.r() * p.resistant.r1);
}

inline double conditioned_objective(double y, double a, double theta, const ModelParams& p,
                                    const SurvivorIntegral& survivor) {
  const double l1 = p.lambda1();
  return theta * p.mutation.mu * std::exp(l1 * y) / (l1 + p.r()) -
         a * clone_count_scale(p) * std::log(survivor.value(theta));
}

inline double conditioned_objective(double y, double a, double theta, const ModelParams& p) {
  return conditioned_objective(y, a, theta, p, SurvivorIntegral(p));
}

// Rate of early recurrence given S_n = a * (l1 mu / (r r1)) n^(1-alpha)
// surviving clones, for a in (0, e^{l1 y}].
inline RateResult conditioned_rate(double y, double a, const ModelParams& p) {
  const double l1 = p.lambda1();
  if (!(y >= 0.0)) throw std::invalid_argument("conditioned_rate requires y >= 0");
  const double a_max = std::exp(l1 * y);
  if (!(a > 0.0) || a > a_max * (1.0 + 1e-12))
    throw std::domain_error("conditioned_rate: clone factor a must lie in (0, e^{l1 y}]");
  const SurvivorIntegral survivor(p);
  const double mu = p.mutation.mu;
  const double bound = survivor.bound();
  const auto best = numeric::maximize_concave(
      [&](double t) { return conditioned_objective(y, a, t, p, survivor); },
      [&](double t) {
        return mu * a_max / (l1 + p.r()) - a * l1 * mu * survivor.second(t) / survivor.value(t);
      },
      detail::kEdge * bound, bound * (1.0 - detail::kEdge));
  return {std::max(0.0, best.value), best.x, best.iterations, RateKind::conditioned, LdCase::acquired};
}

// Poisson deviation cost of observing a times the mean clone count.
inline double clone_number_cost(double a, const ModelParams& p) {
  if (!(a > 0.0)) throw std::invalid_argument("clone_number_cost requires a > 0");
  return clone_count_scale(p) * (a * std::log(a) - a + 1.0);
}

struct ClonesOptimum {
  double a_star_star = 1.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double objective_value = 0.0;
};

// Most likely clone factor given early recurrence by y. Solves
// J(theta1) = e^{l1 y} and l1 (l1 + r) J2(theta2) = e^{l1 y}; the optimum
// is a** = min(J(theta2), e^{l1 y}).
inline ClonesOptimum optimal_clone_factor(double y, const ModelParams& p) {
  if (!(y > 0.0)) throw std::invalid_argument("optimal_clone_factor requires y > 0");
  const double l1 = p.lambda1();
  const double r = p.r();
  const double target = std::exp(l1 * y);
  const SurvivorIntegral survivor(p);
  const double hi = survivor.bound() * (1.0 - 1e-13);

  auto solve = [&](auto&& f, const char* name) {
    try {
      return numeric::find_root(f, 0.0, hi).x;
    } catch (const numeric::BracketError&) {
      throw numeric::BracketError(std::string("optimal_clone_factor: ") + name +
                                  " not bracketed for y = " + std::to_string(y));
    }
  };
  ClonesOptimum out;
  out.theta1 = solve([&](double t) { return survivor.value(t) - target; }, "theta1");
  out.theta2 = solve([&](double t) { return l1 * (l1 + r) * survivor.second(t) - target; }, "theta2");
  if (!(out.theta2 < out.theta1))
    throw std::logic_error("optimal_clone_factor: theta2 >= theta1, expected theta2 < theta1");
  out.a_star_star = std::min(survivor.value(out.theta2), target);
  out.objective_value = conditioned_rate(y, out.a_star_star, p).value + clone_number_cost(out.a_star_star, p);
  return out;
}

}  // namespace ldbranch
