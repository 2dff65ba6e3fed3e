#pragma once

// Invariant checks run by `ldbranch validate` on the configured parameters.
// Every check is deterministic; none depends on sampling noise.

#include "ldbranch/ldbranch.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace ldbranch::cli {

struct InvariantCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct InvariantReport {
  std::vector<InvariantCheck> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (!c.pass) out.push_back(c.name + ": " + c.detail);
    return out;
  }
};

inline nlohmann::ordered_json to_json(const InvariantReport& r) {
  nlohmann::ordered_json j;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  j["checks"] = std::move(arr);
  j["pass"] = r.passed();
  return j;
}

namespace detail {

inline std::vector<double> grid(double lo, double hi, int points) {
  std::vector<double> g;
  for (int i = 0; i < points; ++i) g.push_back(lo + (hi - lo) * i / (points - 1));
  return g;
}

// Runs one check; exceptions count as failures with their message.
inline void run_check(InvariantReport& rep, const std::string& name, const std::function<std::string()>& body) {
  try {
    std::string problem = body();
    rep.checks.push_back({name, problem.empty(), problem.empty() ? "ok" : problem});
  } catch (const std::exception& e) {
    rep.checks.push_back({name, false, std::string("exception: ") + e.what()});
  }
}

}  // namespace detail

inline InvariantReport run_invariant_suite(const Config& cfg) {
  using detail::grid;
  using detail::run_check;
  const auto& p = cfg.params;
  const auto& s = cfg.scenario;
  InvariantReport rep;

  run_check(rep, "validate_idempotent", [&]() -> std::string {
    const auto once = validate(p, s);
    const auto twice = validate(once.params, once.scenario);
    return render_config({twice.params, twice.scenario, cfg.seed}) == render_config(cfg) ? "" : "changed";
  });

  run_check(rep, "time_scale_monotone", [&]() -> std::string {
    const double r = p.r();
    if (!(time_scale(1e3, r) < time_scale(1e4, r))) return "not increasing in n";
    if (!(time_scale(1e3, r) > time_scale(1e3, 2.0 * r))) return "not decreasing in r";
    return "";
  });

  const CumulantLimit series(p, EvalMethod::series);
  const CumulantLimit quad(p, EvalMethod::quadrature);
  run_check(rep, "cumulant_series_vs_quadrature", [&]() -> std::string {
    for (double t : grid(0.01, 0.99, 99)) {
      if (std::abs(series.value(t) - quad.value(t)) > 1e-10) return "Lambda differs at " + io::format_number(t);
      if (std::abs(series.prime(t) - quad.prime(t)) > 1e-10) return "Lambda' differs at " + io::format_number(t);
    }
    return "";
  });

  run_check(rep, "cumulant_shape", [&]() -> std::string {
    const CumulantLimit c(p);
    if (c.value(0.0) != 0.0) return "Lambda(0) != 0";
    const double slope = p.lambda1() * p.mutation.mu / ((p.lambda1() + p.r()) * p.resistant.r1);
    if (std::abs(c.prime(0.0) - slope) > 1e-12 * std::max(1.0, slope)) return "Lambda'(0) mismatch";
    for (double t : grid(0.01, 0.99, 99)) {
      if (!(c.double_prime(t) > 0.0)) return "Lambda'' not positive at " + io::format_number(t);
      const double h = 1e-5;
      const double fd = (c.value(t + h * (1 - t)) - c.value(t - h * (1 - t))) / (2 * h * (1 - t));
      if (std::abs(fd - c.prime(t)) > 1e-6 * c.prime(t)) return "Lambda' vs finite difference at " + io::format_number(t);
    }
    if (!std::isinf(c.value(1.0))) return "Lambda(1) finite";
    return "";
  });

  run_check(rep, "survivor_series_vs_quadrature", [&]() -> std::string {
    const SurvivorIntegral a(p, EvalMethod::series), b(p, EvalMethod::quadrature);
    const double bound = a.bound();
    double prev = 0.0;
    for (double q : grid(0.0, 0.99, 100)) {
      const double t = q * bound;
      if (std::abs(a.value(t) - b.value(t)) > 1e-10) return "J differs at q=" + io::format_number(q);
      if (std::abs(a.second(t) - b.second(t)) > 1e-10) return "J2 differs at q=" + io::format_number(q);
      if (q > 0.0 && !(a.value(t) > prev)) return "J not increasing at q=" + io::format_number(q);
      prev = a.value(t);
    }
    return std::abs(a.value(0.0) - 1.0) < 1e-15 ? "" : "J(0) != 1";
  });

  const auto ys = grid(0.1, 2.0, 20);
  for (auto kind : {RateKind::recurrence, RateKind::crossover}) {
    for (auto c : {LdCase::acquired, LdCase::critical, LdCase::pre_existing}) {
      const std::string name =
          std::string(rate_kind_name(kind)) + "_case" + std::to_string(static_cast<int>(c)) + "_monotone";
      run_check(rep, name, [&, kind, c]() -> std::string {
        auto L = [&](double y) {
          return kind == RateKind::recurrence ? recurrence_rate(c, y, p) : crossover_rate(c, y, p);
        };
        if (std::abs(L(1e-6).value) > 1e-9) return "nonzero at y=0+";
        double prev = 0.0;
        for (double y : ys) {
          const double v = L(y).value;
          if (!(v > prev)) return "not strictly increasing at y=" + io::format_number(y);
          prev = v;
        }
        return "";
      });
    }
  }

  run_check(rep, "crossover_exceeds_recurrence", [&]() -> std::string {
    for (auto c : {LdCase::acquired, LdCase::critical, LdCase::pre_existing})
      for (double y : ys)
        if (!(crossover_rate(c, y, p).value > recurrence_rate(c, y, p).value))
          return "case " + std::to_string(static_cast<int>(c)) + " at y=" + io::format_number(y);
    return "";
  });

  run_check(rep, "case2_additivity", [&]() -> std::string {
    const CumulantLimit c(p);
    for (double t : grid(0.01, 0.99, 99)) {
      const double two = rate_objective(RateKind::recurrence, LdCase::critical, s.y, t, p, c);
      const double sum = rate_objective(RateKind::recurrence, LdCase::acquired, s.y, t, p, c) +
                         rate_objective(RateKind::recurrence, LdCase::pre_existing, s.y, t, p, c);
      if (std::abs(two - sum) > 1e-12) return "at theta=" + io::format_number(t);
    }
    return "";
  });

  run_check(rep, "case3_closed_form", [&]() -> std::string {
    for (double y : ys) {
      const auto r = recurrence_rate(LdCase::pre_existing, y, p);
      if (std::abs(r.theta_star - preexisting_theta_star(RateKind::recurrence, y, p)) > 1e-6)
        return "maximizer off at y=" + io::format_number(y);
    }
    return "";
  });

  run_check(rep, "clone_optimum", [&]() -> std::string {
    double prev = 1.0;
    for (double y : grid(0.5, 3.0, 6)) {
      const auto o = optimal_clone_factor(y, p);
      if (!(o.theta2 < o.theta1)) return "theta2 >= theta1 at y=" + io::format_number(y);
      if (!(o.a_star_star > prev)) return "a** not increasing at y=" + io::format_number(y);
      if (!(o.a_star_star <= std::exp(p.lambda1() * y))) return "a** above e^{l1 y}";
      prev = o.a_star_star;
    }
    return "";
  });

  run_check(rep, "clone_distribution", [&]() -> std::string {
    for (double t : {0.5, 2.0, 5.0}) {
      if (std::abs(clone_mgf(0.0, t, p.resistant) - 1.0) > 1e-14) return "phi_t(0) != 1";
      double total = 0.0;
      for (std::uint64_t j = 0; j < 200000 && total < 1.0 - 1e-12; ++j) total += clone_pmf(j, t, p.resistant);
      if (std::abs(total - 1.0) > 1e-8) return "pmf does not sum to 1 at t=" + io::format_number(t);
      if (std::abs(subcritical_laplace(0.0, t, p.sensitive) - 1.0) > 1e-14) return "g_t(0) != 1";
    }
    return "";
  });

  run_check(rep, "target_times", [&]() -> std::string {
    const auto t = solve_targets(p, s);
    if (!(t.u_lower <= t.zeta + 1e-12 && t.zeta <= t.u_upper + 1e-12)) return "zeta outside its bracket";
    const double an = s.a * static_cast<double>(s.n);
    const double mass = mean_population(Population::pre_existing, t.zeta, p, s.n) +
                        mean_population(Population::acquired, t.zeta, p, s.n);
    if (std::abs(mass - an) > 1e-9 * an) return "residual at zeta";
    ScenarioConfig unit = s;
    unit.a = 1.0;
    if (p.initial_mutants(s.n) < s.n && !(t.xi < solve_targets(p, unit).zeta)) return "xi >= zeta(1)";
    return "";
  });

  run_check(rep, "simulation_determinism", [&]() -> std::string {
    ScenarioConfig small = s;
    small.n = std::min<std::uint64_t>(s.n, 200);
    PathOptions opt;
    opt.ledger = true;
    const auto a = simulate_path(p, small, cfg.seed, 0, opt);
    const auto b = simulate_path(p, small, cfg.seed, 0, opt);
    if (a.events != b.events || a.final_state.t != b.final_state.t || a.passage.gamma != b.passage.gamma)
      return "same seed, different path";
    return a.final_state.z2 == a.ledger->live_mass() ? "" : "ledger mass differs from z2";
  });

  return rep;
}

}  // namespace ldbranch::cli
