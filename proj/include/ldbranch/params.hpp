#pragma once

// Model parameters for the two-type branching model of treatment failure:
// a subcritical sensitive population, a supercritical resistant population
// present at the start of treatment, and resistant clones created by
// mutation during treatment.

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace ldbranch {

struct SensitiveRates {
  double r0 = 0.3;  // birth
  double d0 = 0.5;  // death

  double lambda0() const { return r0 - d0; }
  // decay rate r = -lambda0
  double decay() const { return d0 - r0; }
};

struct ResistantRates {
  double r1 = 0.4;
  double d1 = 0.2;

  double lambda1() const { return r1 - d1; }
};

struct MutationLaw {
  double mu = 0.1;
  double alpha = 0.5;

  // per-cell mutation rate mu * n^-alpha
  double per_cell_rate(std::uint64_t n) const {
    return mu * std::exp(-alpha * std::log(static_cast<double>(n)));
  }
  // mu * n^(1-alpha), the scale of the mutation influx
  double influx_scale(std::uint64_t n) const {
    return mu * std::exp((1.0 - alpha) * std::log(static_cast<double>(n)));
  }
};

// Asymptotic class of the initial resistant count X(n).
namespace regime {

// X(n) = o(n^(1-alpha)). The concrete count is floor(n^exponent) when
// exponent >= 0 and zero otherwise; exponent must stay below 1 - alpha.
struct SubThreshold {
  double exponent = -1.0;
};

// X(n) ~ n^(1-alpha), concretized as round(n^(1-alpha)).
struct Critical {};

// X(n) ~ n^(1-beta) with 0 < beta < alpha, concretized as round(n^(1-beta)).
struct PreExisting {
  double beta = 0.25;
};

}  // namespace regime

using InitialMutantRegime =
    std::variant<regime::SubThreshold, regime::Critical, regime::PreExisting>;

// Which of the three large-deviation cases a regime falls into.
enum class LdCase { acquired = 1, critical = 2, pre_existing = 3 };

inline LdCase case_of(const InitialMutantRegime& reg) {
  if (std::holds_alternative<regime::SubThreshold>(reg)) return LdCase::acquired;
  if (std::holds_alternative<regime::Critical>(reg)) return LdCase::critical;
  return LdCase::pre_existing;
}

inline const char* regime_name(const InitialMutantRegime& reg) {
  switch (case_of(reg)) {
    case LdCase::acquired: return "subthreshold";
    case LdCase::critical: return "critical";
    case LdCase::pre_existing: return "preexisting";
  }
  return "?";
}

struct ModelParams {
  SensitiveRates sensitive;
  ResistantRates resistant;
  MutationLaw mutation;
  InitialMutantRegime regime = regime::SubThreshold{};

  double r() const { return sensitive.decay(); }
  double lambda1() const { return resistant.lambda1(); }

  // Concrete initial resistant count at population size n.
  std::uint64_t initial_mutants(std::uint64_t n) const {
    const double logn = std::log(static_cast<double>(n));
    return std::visit(
        [&](const auto& reg) -> std::uint64_t {
          using T = std::decay_t<decltype(reg)>;
          if constexpr (std::is_same_v<T, regime::SubThreshold>) {
            if (reg.exponent < 0.0) return 0;
            return static_cast<std::uint64_t>(std::floor(std::exp(reg.exponent * logn)));
          } else if constexpr (std::is_same_v<T, regime::Critical>) {
            return static_cast<std::uint64_t>(
                std::llround(std::exp((1.0 - mutation.alpha) * logn)));
          } else {
            return static_cast<std::uint64_t>(std::llround(std::exp((1.0 - reg.beta) * logn)));
          }
        },
        regime);
  }

  // Large-deviation speed exponent c in n^c: 1 - alpha, or 1 - beta in case 3.
  double speed_exponent() const {
    if (const auto* pre = std::get_if<regime::PreExisting>(&regime)) return 1.0 - pre->beta;
    return 1.0 - mutation.alpha;
  }
};

struct ScenarioConfig {
  std::uint64_t n = 1000;
  double a = 1.0;  // recurrence threshold a*n
  double y = 1.0;  // early offset
  double horizon_multiplier = 3.0;
};

struct Violation {
  std::string field;
  double observed = 0.0;
  std::string message;
};

class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(std::vector<Violation> violations)
      : std::invalid_argument(format(violations)), violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string format(const std::vector<Violation>& vs) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto& v : vs) os << "\n  " << v.field << " = " << v.observed << ": " << v.message;
    return os.str();
  }

  std::vector<Violation> violations_;
};

// Lists every violated invariant; empty means the configuration is usable.
inline std::vector<Violation> check(const ModelParams& p, const ScenarioConfig& s) {
  std::vector<Violation> out;
  auto fail = [&](std::string field, double v, std::string msg) {
    out.push_back({std::move(field), v, std::move(msg)});
  };
  auto finite = [](double v) { return std::isfinite(v); };

  const auto& sr = p.sensitive;
  if (!finite(sr.r0) || sr.r0 < 0.0) fail("r0", sr.r0, "r0 must be nonnegative");
  if (!finite(sr.d0) || sr.d0 <= 0.0) fail("d0", sr.d0, "d0 must be positive");
  if (!(sr.lambda0() < 0.0)) fail("lambda0", sr.lambda0(), "lambda0 must be negative");

  const auto& rr = p.resistant;
  if (!finite(rr.r1) || rr.r1 <= 0.0) fail("r1", rr.r1, "r1 must be positive");
  if (!finite(rr.d1) || rr.d1 < 0.0) fail("d1", rr.d1, "d1 must be nonnegative");
  if (!(rr.lambda1() > 0.0)) fail("lambda1", rr.lambda1(), "lambda1 must be positive");

  const auto& m = p.mutation;
  if (!finite(m.mu) || m.mu <= 0.0) fail("mu", m.mu, "mu must be positive");
  if (!(m.alpha > 0.0 && m.alpha < 1.0)) fail("alpha", m.alpha, "alpha must lie in (0,1)");

  if (const auto* sub = std::get_if<regime::SubThreshold>(&p.regime)) {
    if (sub->exponent >= 0.0 && !(sub->exponent < 1.0 - m.alpha))
      fail("exponent", sub->exponent, "subthreshold exponent must be below 1 - alpha");
  } else if (const auto* pre = std::get_if<regime::PreExisting>(&p.regime)) {
    if (!(pre->beta > 0.0 && pre->beta < m.alpha))
      fail("beta", pre->beta, "beta must lie in (0, alpha)");
  }

  if (s.n < 1) fail("n", static_cast<double>(s.n), "n must be at least 1");
  if (!finite(s.a) || s.a <= 0.0) fail("a", s.a, "a must be positive");
  if (!finite(s.y) || s.y <= 0.0) fail("y", s.y, "y must be positive");
  if (!finite(s.horizon_multiplier) || s.horizon_multiplier <= 0.0)
    fail("horizon_multiplier", s.horizon_multiplier, "horizon_multiplier must be positive");

  if (out.empty() && s.n >= 1) {
    const auto x = p.initial_mutants(s.n);
    if (x >= s.n) fail("X", static_cast<double>(x), "initial mutant count must be below n");
  }
  return out;
}

struct CheckedConfig {
  ModelParams params;
  ScenarioConfig scenario;
};

// Returns the configuration unchanged or throws with every violation.
inline CheckedConfig validate(const ModelParams& p, const ScenarioConfig& s) {
  auto violations = check(p, s);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return {p, s};
}

// t_n = log(n) / r
inline double time_scale(double n, double r) {
  if (!(n >= 1.0) || !(r > 0.0)) throw std::invalid_argument("time_scale requires n >= 1 and r > 0");
  return std::log(n) / r;
}

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

}  // namespace ldbranch
