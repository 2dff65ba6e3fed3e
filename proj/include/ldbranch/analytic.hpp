#pragma once

// Closed-form moments, generating functions and deterministic target times
// for the sensitive population Z0, the pre-existing mutants Z1 and the
// acquired mutants Z2.

#include "ldbranch/numeric.hpp"
#include "ldbranch/params.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace ldbranch {

enum class Population { sensitive, pre_existing, acquired };

inline const char* population_name(Population p) {
  switch (p) {
    case Population::sensitive: return "z0";
    case Population::pre_existing: return "z1";
    case Population::acquired: return "z2";
  }
  return "?";
}

inline double mean_population(Population which, double t, const ModelParams& p, std::uint64_t n) {
  if (!(t >= 0.0)) throw std::invalid_argument("mean_population: t must be nonnegative");
  const double r = p.r();
  const double l1 = p.lambda1();
  switch (which) {
    case Population::sensitive:
      return static_cast<double>(n) * std::exp(-r * t);
    case Population::pre_existing:
      return static_cast<double>(p.initial_mutants(n)) * std::exp(l1 * t);
    case Population::acquired:
      // mu/(l1+r) n^(1-alpha) e^{l1 t} (1 - e^{(lambda0-l1) t})
      return p.mutation.influx_scale(n) / (l1 + r) * std::exp(l1 * t) * -std::expm1(-(l1 + r) * t);
  }
  return 0.0;
}

inline double variance_population(Population which, double t, const ModelParams& p, std::uint64_t n) {
  if (!(t >= 0.0)) throw std::invalid_argument("variance_population: t must be nonnegative");
  switch (which) {
    case Population::sensitive: {
      const double r = p.r();
      const auto& s = p.sensitive;
      return (s.r0 + s.d0) / r * static_cast<double>(n) * std::exp(-r * t) * -std::expm1(-r * t);
    }
    case Population::pre_existing: {
      const double l1 = p.lambda1();
      const auto& m = p.resistant;
      return static_cast<double>(p.initial_mutants(n)) * (m.r1 + m.d1) / l1 * std::exp(l1 * t) *
             std::expm1(l1 * t);
    }
    case Population::acquired:
      break;
  }
  throw std::invalid_argument("variance_population: no closed form for the acquired mutants");
}

// Upper edge of the finite domain of the single-clone MGF at time t.
inline double clone_mgf_domain(double t, const ResistantRates& m) {
  if (!(t > 0.0)) throw std::invalid_argument("clone_mgf_domain: t must be positive");
  const double decay = std::exp(-m.lambda1() * t);
  // log((r1 e^{l1 t} - d1) / (r1 e^{l1 t} - r1)) rewritten without overflow
  return std::log(m.r1 - m.d1 * decay) - std::log(m.r1) - std::log(-std::expm1(-m.lambda1() * t));
}

// E exp(theta Z(t)) for a birth-death clone started from one cell;
// +infinity at and beyond the domain edge.
inline double clone_mgf(double theta, double t, const ResistantRates& m) {
  if (!(t > 0.0)) throw std::invalid_argument("clone_mgf: t must be positive");
  if (theta >= clone_mgf_domain(t, m)) return kInfinity;
  const double decay = std::exp(-m.lambda1() * t);
  const double em1 = std::expm1(theta);
  const double tail = decay * (m.r1 * std::exp(theta) - m.d1);
  return (m.d1 * em1 - tail) / (m.r1 * em1 - tail);
}

// P(Z(t) > 0) for a clone started from one cell.
inline double survival_probability(double t, const ResistantRates& m) {
  if (!(t >= 0.0)) throw std::invalid_argument("survival_probability: t must be nonnegative");
  return m.lambda1() / (m.r1 - m.d1 * std::exp(-m.lambda1() * t));
}

// E[exp(theta Z(t)) | Z(t) > 0]; the surviving clone size is geometric.
inline double clone_mgf_given_survival(double theta, double t, const ResistantRates& m) {
  if (!(t > 0.0)) throw std::invalid_argument("clone_mgf_given_survival: t must be positive");
  if (theta >= clone_mgf_domain(t, m)) return kInfinity;
  const double decay = std::exp(-m.lambda1() * t);
  const double et = std::exp(theta);
  return et * m.lambda1() * decay / (-m.r1 * std::expm1(theta) + decay * (m.r1 * et - m.d1));
}

inline double clone_pmf(std::uint64_t j, double t, const ResistantRates& m) {
  if (!(t > 0.0)) throw std::invalid_argument("clone_pmf: t must be positive");
  const double l1 = m.lambda1();
  const double decay = std::exp(-l1 * t);
  const double denom = m.r1 - m.d1 * decay;
  if (j == 0) return m.d1 * -std::expm1(-l1 * t) / denom;
  const double log_first = std::log(l1 / denom);
  const double log_ratio = std::log(m.r1 * -std::expm1(-l1 * t) / denom);
  const double log_last = std::log(l1 * decay / denom);
  return std::exp(log_first + static_cast<double>(j - 1) * log_ratio + log_last);
}

// E exp(-theta Z0(t)) for the subcritical process started from one cell.
inline double subcritical_laplace(double theta, double t, const SensitiveRates& s) {
  if (!(theta >= 0.0) || !(t >= 0.0))
    throw std::invalid_argument("subcritical_laplace: theta and t must be nonnegative");
  const double em1 = std::expm1(-theta);
  const double c = s.r0 * std::exp(-theta) - s.d0;
  const double e = s.d0 * em1;
  const double f = s.r0 * em1;
  const double decay = std::exp(-s.decay() * t);
  return (c - e * decay) / (c - f * decay);
}

// k(theta) = (e - f) / c, the leading coefficient of 1 - g_t(theta) on the
// scale n^-a.
inline double decay_coefficient(double theta, const SensitiveRates& s) {
  if (!(theta > 0.0)) throw std::invalid_argument("decay_coefficient: theta must be positive");
  const double em1 = std::expm1(-theta);
  const double c = s.r0 * std::exp(-theta) - s.d0;
  return (s.d0 - s.r0) * em1 / c;
}

struct TargetTimes {
  double zeta = 0.0;     // recurrence target: z1 + z2 = a n
  double xi = 0.0;       // crossover target: z1 + z2 = z0
  double u_lower = 0.0;  // bracket from z2 <= c e^{l1 t}
  double u_upper = 0.0;  // bracket from z2 >= c e^{l1 t} - c
  double u_of_y = 0.0;   // (zeta - y) / t_n
  double t_n = 0.0;
  int iterations = 0;
};

namespace detail {

struct MutantMeanShape {
  double x;  // X(n)
  double c;  // mu n^(1-alpha) / (l1 + r)
  double l1;
  double r;

  // log(z1 + z2) at time t
  double log_mass(double t) const {
    // (x + c) e^{l1 t} - c e^{-r t} = e^{l1 t} (x + c (1 - e^{-(l1+r) t}))
    return l1 * t + std::log(x - c * std::expm1(-(l1 + r) * t));
  }
};

}  // namespace detail

inline TargetTimes solve_targets(const ModelParams& p, const ScenarioConfig& s) {
  const double n = static_cast<double>(s.n);
  const double r = p.r();
  const double l1 = p.lambda1();
  const detail::MutantMeanShape shape{static_cast<double>(p.initial_mutants(s.n)),
                                      p.mutation.influx_scale(s.n) / (l1 + r), l1, r};
  const double an = s.a * n;
  if (!(shape.x + shape.c > 0.0) || !std::isfinite(shape.c))
    throw numeric::BracketError("solve_targets: no mutant source, recurrence never happens");
  if (shape.x >= an)
    throw numeric::BracketError("solve_targets: initial mutants already exceed a*n");

  TargetTimes out;
  out.t_n = time_scale(n, r);
  out.u_lower = std::log(an / (shape.x + shape.c)) / l1;
  out.u_upper = std::log((an + shape.c) / (shape.x + shape.c)) / l1;

  const double log_an = std::log(an);
  const auto zeta = numeric::find_root([&](double t) { return shape.log_mass(t) - log_an; },
                                       std::max(0.0, out.u_lower), out.u_upper);
  out.zeta = zeta.x;
  out.iterations = zeta.iterations;

  // Crossover: log(z1 + z2) - log(z0) is strictly increasing. The lower
  // bracket drops the -c e^{-rt} term; the upper one is found by doubling.
  const double log_n = std::log(n);
  auto gap = [&](double t) { return shape.log_mass(t) - (log_n - r * t); };
  const double xi_lo = std::max(0.0, std::log(n / (shape.x + shape.c)) / (l1 + r));
  if (gap(xi_lo) >= 0.0) {
    out.xi = xi_lo;
  } else {
    double width = std::max(1e-3, std::log1p(shape.c / n) / (l1 + r));
    while (gap(xi_lo + width) < 0.0) width *= 2.0;
    out.xi = numeric::find_root(gap, xi_lo, xi_lo + width).x;
  }

  out.u_of_y = (out.zeta - s.y) / out.t_n;
  return out;
}

// mu n^(1-alpha) * int_0^T e^{-rs} P(clone born at s survives to T) ds.
// T = +infinity returns the limit n^(1-alpha) l1 mu / (r r1).
inline double clone_count_mean(double T, const ModelParams& p, std::uint64_t n) {
  if (!(T >= 0.0)) throw std::invalid_argument("clone_count_mean: T must be nonnegative");
  const double r = p.r();
  if (std::isinf(T)) return p.mutation.influx_scale(n) * p.lambda1() / (r * p.resistant.r1);
  const auto& m = p.resistant;
  const double integral = numeric::integrate(
      [&](double s) { return std::exp(-r * s) * survival_probability(T - s, m); }, 0.0, T);
  return p.mutation.influx_scale(n) * integral;
}

// E[surviving-clone mass at T | S = K] in the deterministic-sensitive model.
inline double conditional_clone_mean(std::uint64_t K, double T, const ModelParams& p) {
  if (!(T > 0.0)) throw std::invalid_argument("conditional_clone_mean: T must be positive");
  if (K == 0) return 0.0;
  const double r = p.r();
  const double l1 = p.lambda1();
  const auto& m = p.resistant;
  const double num =
      numeric::integrate([&](double s) { return std::exp(l1 * T - (l1 + r) * s); }, 0.0, T);
  const double den = numeric::integrate(
      [&](double s) { return survival_probability(T - s, m) * std::exp(-r * s); }, 0.0, T);
  return static_cast<double>(K) * num / den;
}

enum class CloneKernel {
  finite,  // exact finite-T display
  limit    // n -> infinity kernel l1 e^{l1 s} / (l1 e^{l1 s} - r1 theta)
};

// Largest theta for which the finite-T conditional MGF is finite.
inline double conditional_clone_mgf_bound(double T, const ModelParams& p) {
  return clone_mgf_domain(T, p.resistant) * std::exp(p.lambda1() * T);
}

// E[exp(theta e^{-l1 T} Z_S(T)) | S = K]. With the limit kernel this is
// J(theta)^K with J the survivor integral; +infinity outside the domain.
inline double conditional_clone_mgf(double theta, std::uint64_t K, double T, const ModelParams& p,
                                    CloneKernel kernel = CloneKernel::finite) {
  if (!(T > 0.0)) throw std::invalid_argument("conditional_clone_mgf: T must be positive");
  if (K == 0 || theta == 0.0) return 1.0;
  const double r = p.r();
  const double l1 = p.lambda1();
  const auto& m = p.resistant;

  if (kernel == CloneKernel::limit) {
    if (theta >= l1 / m.r1) return kInfinity;
    // r int_0^inf l1 e^{l1 s}/(l1 e^{l1 s} - r1 theta) e^{-rs} ds, with x = e^{-rs}
    const double q = m.r1 * theta / l1;
    const double ratio = numeric::integrate_graded(
        [&](double x) { return 1.0 / (1.0 - q * std::pow(x, l1 / r)); }, 0.0, 1.0, 1.0 - q);
    return std::pow(ratio, static_cast<double>(K));
  }

  if (theta >= conditional_clone_mgf_bound(T, p)) return kInfinity;
  const double scaled = theta * std::exp(-l1 * T);
  const double num = numeric::integrate(
      [&](double s) {
        if (T - s <= 0.0) return std::exp(scaled) * std::exp(-r * s);
        return survival_probability(T - s, m) * clone_mgf_given_survival(scaled, T - s, m) *
               std::exp(-r * s);
      },
      0.0, T);
  const double den = numeric::integrate(
      [&](double s) { return survival_probability(T - s, m) * std::exp(-r * s); }, 0.0, T);
  const double ratio = num / den;
  if (!std::isfinite(ratio)) return kInfinity;
  return std::pow(ratio, static_cast<double>(K));
}

}  // namespace ldbranch
