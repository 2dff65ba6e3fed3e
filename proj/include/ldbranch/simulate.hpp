#pragma once

// Exact event-driven simulation of the three populations, with optional
// per-clone bookkeeping for the acquired mutants.

#include "ldbranch/analytic.hpp"
#include "ldbranch/io.hpp"
#include "ldbranch/params.hpp"
#include "ldbranch/rng.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldbranch {

class EventCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fenwick tree over nonnegative counts that can grow at the back.
class FenwickTree {
 public:
  std::size_t size() const { return tree_.size(); }

  void push_back(std::uint64_t value) {
    const std::size_t i = tree_.size() + 1;  // 1-based slot of the new element
    const std::size_t low = i & (~i + 1);
    tree_.push_back(value + prefix(i - 1) - prefix(i - low));
  }

  void add(std::size_t index, std::int64_t delta) {
    for (std::size_t i = index + 1; i <= tree_.size(); i += i & (~i + 1))
      tree_[i - 1] = static_cast<std::uint64_t>(static_cast<std::int64_t>(tree_[i - 1]) + delta);
  }

  // Sum of the first `count` elements.
  std::uint64_t prefix(std::size_t count) const {
    std::uint64_t s = 0;
    for (std::size_t i = count; i > 0; i -= i & (~i + 1)) s += tree_[i - 1];
    return s;
  }

  // Index of the element containing unit k (0-based) of the running total.
  std::size_t find(std::uint64_t k) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 <= tree_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      if (pos + step <= tree_.size() && tree_[pos + step - 1] <= k) {
        pos += step;
        k -= tree_[pos - 1];
      }
    }
    return pos;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

struct CloneRecord {
  double birth_time = 0.0;
  std::uint64_t size = 1;
  bool extinct = false;
  double extinction_time = kInfinity;
};

struct CloneCounts {
  std::uint64_t surviving = 0;  // S
  std::uint64_t extinct = 0;    // E
};

// Per-clone record of the acquired mutants.
class CloneLedger {
 public:
  std::size_t add_clone(double t) {
    records_.push_back({t, 1, false, kInfinity});
    sizes_.push_back(1);
    ++live_mass_;
    ++alive_;
    return records_.size() - 1;
  }

  void birth(std::size_t id) {
    ++records_[id].size;
    sizes_.add(id, 1);
    ++live_mass_;
  }

  void death(std::size_t id, double t) {
    auto& c = records_[id];
    --c.size;
    sizes_.add(id, -1);
    --live_mass_;
    if (c.size == 0) {
      c.extinct = true;
      c.extinction_time = t;
      --alive_;
    }
  }

  // Clone holding cell k of the live acquired mass, k in [0, live_mass).
  std::size_t clone_of_cell(std::uint64_t k) const { return sizes_.find(k); }

  const std::vector<CloneRecord>& clones() const { return records_; }
  std::uint64_t live_mass() const { return live_mass_; }
  std::uint64_t total_born() const { return records_.size(); }

  CloneCounts counts() const { return {alive_, records_.size() - alive_}; }

  // S and E with respect to a reference time: clones born by t that are
  // alive at t, and those already extinct at t.
  CloneCounts counts_at(double t) const {
    CloneCounts c;
    for (const auto& r : records_) {
      if (r.birth_time > t) continue;
      if (r.extinction_time <= t) ++c.extinct;
      else ++c.surviving;
    }
    return c;
  }

 private:
  std::vector<CloneRecord> records_;
  FenwickTree sizes_;
  std::uint64_t live_mass_ = 0;
  std::uint64_t alive_ = 0;
};

enum class EventKind { sensitive_birth, sensitive_death, mutation, mutant_birth, mutant_death };

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::sensitive_birth: return "S_BIRTH";
    case EventKind::sensitive_death: return "S_DEATH";
    case EventKind::mutation: return "MUTATION";
    case EventKind::mutant_birth: return "M_BIRTH";
    case EventKind::mutant_death: return "M_DEATH";
  }
  return "?";
}

struct EventRecord {
  double t = 0.0;
  EventKind kind = EventKind::sensitive_birth;
  std::uint64_t z0 = 0, z1 = 0, z2 = 0;  // state after the event
  std::int64_t clone_id = -1;            // -1: not an acquired clone or ledger off
};

struct PopulationSnapshot {
  double t = 0.0;
  std::uint64_t z0 = 0, z1 = 0, z2 = 0;
};

struct FirstPassage {
  double gamma = kInfinity;  // recurrence time
  bool gamma_censored = true;
  double tau = kInfinity;  // crossover time
  bool tau_censored = true;
  double horizon = 0.0;
};

struct PathOptions {
  bool ledger = false;
  // Report the state (left limit) at these times; must be sorted.
  std::vector<double> checkpoints;
  // Absolute stop time; NaN selects horizon_multiplier * t_n.
  double horizon = std::numeric_limits<double>::quiet_NaN();
  // Stop as soon as both passages are recorded and all checkpoints passed.
  bool stop_at_passages = true;
  std::function<void(const EventRecord&)> on_event;
  std::uint64_t event_cap = 100000000;
};

struct PathResult {
  FirstPassage passage;
  std::vector<PopulationSnapshot> checkpoints;
  PopulationSnapshot final_state;
  std::uint64_t events = 0;
  std::uint64_t mutations = 0;
  std::optional<CloneLedger> ledger;
};

inline double default_horizon(const ModelParams& p, const ScenarioConfig& s) {
  return s.horizon_multiplier * time_scale(static_cast<double>(s.n), p.r());
}

inline PathResult simulate_path(const ModelParams& p, const ScenarioConfig& s, PhiloxStream& rng,
                                const PathOptions& opt = {}) {
  const double horizon = std::isnan(opt.horizon) ? default_horizon(p, s) : opt.horizon;
  const double an = s.a * static_cast<double>(s.n);
  const double r0 = p.sensitive.r0;
  const double d0 = p.sensitive.d0;
  const double m = p.mutation.per_cell_rate(s.n);
  const double r1 = p.resistant.r1;
  const double d1 = p.resistant.d1;
  const double s_birth = r0;
  const double s_death = r0 + d0;
  const double s_total = r0 + d0 + m;
  const double m_total = r1 + d1;
  const double m_birth_share = r1 / m_total;

  PathResult out;
  out.passage.horizon = horizon;
  if (opt.ledger) out.ledger.emplace();
  auto& ledger = out.ledger;

  std::uint64_t z0 = s.n;
  std::uint64_t z1 = p.initial_mutants(s.n);
  std::uint64_t z2 = 0;
  double t = 0.0;
  std::size_t next_cp = 0;
  out.checkpoints.reserve(opt.checkpoints.size());

  auto note_passages = [&] {
    const double mutants = static_cast<double>(z1 + z2);
    if (out.passage.gamma_censored && mutants > an) {
      out.passage.gamma = t;
      out.passage.gamma_censored = false;
    }
    if (out.passage.tau_censored && z1 + z2 > z0) {
      out.passage.tau = t;
      out.passage.tau_censored = false;
    }
  };
  auto flush_checkpoints = [&](double upto) {
    while (next_cp < opt.checkpoints.size() && opt.checkpoints[next_cp] < upto) {
      out.checkpoints.push_back({opt.checkpoints[next_cp], z0, z1, z2});
      ++next_cp;
    }
  };
  note_passages();

  while (true) {
    if (opt.stop_at_passages && !out.passage.gamma_censored && !out.passage.tau_censored &&
        next_cp == opt.checkpoints.size())
      break;
    const double rate_s = static_cast<double>(z0) * s_total;
    const double rate_m = static_cast<double>(z1 + z2) * m_total;
    const double total = rate_s + rate_m;
    if (total <= 0.0) break;
    const double t_next = t + rng.exponential(total);
    if (t_next > horizon) break;
    flush_checkpoints(t_next);
    t = t_next;

    if (++out.events > opt.event_cap)
      throw EventCapError("simulate_path: event cap of " + std::to_string(opt.event_cap) + " reached");

    EventRecord ev;
    const double u = rng.uniform() * total;
    if (u < rate_s) {
      const double per_cell = u / static_cast<double>(z0);
      if (per_cell < s_birth) {
        ++z0;
        ev.kind = EventKind::sensitive_birth;
      } else if (per_cell < s_death) {
        --z0;
        ev.kind = EventKind::sensitive_death;
      } else {
        ++z2;
        ++out.mutations;
        ev.kind = EventKind::mutation;
        if (ledger) ev.clone_id = static_cast<std::int64_t>(ledger->add_clone(t));
      }
    } else {
      const bool birth = rng.uniform() < m_birth_share;
      const auto cell = static_cast<std::uint64_t>(rng.uniform() * static_cast<double>(z1 + z2));
      ev.kind = birth ? EventKind::mutant_birth : EventKind::mutant_death;
      if (cell < z1) {
        birth ? ++z1 : --z1;
      } else {
        birth ? ++z2 : --z2;
        if (ledger) {
          const auto id = ledger->clone_of_cell(std::min(cell - z1, ledger->live_mass() - 1));
          birth ? ledger->birth(id) : ledger->death(id, t);
          ev.clone_id = static_cast<std::int64_t>(id);
        }
      }
    }
    note_passages();
    if (opt.on_event) {
      ev.t = t;
      ev.z0 = z0;
      ev.z1 = z1;
      ev.z2 = z2;
      opt.on_event(ev);
    }
  }
  // Remaining checkpoints before the horizon see the final state.
  while (next_cp < opt.checkpoints.size() && opt.checkpoints[next_cp] <= horizon) {
    out.checkpoints.push_back({opt.checkpoints[next_cp], z0, z1, z2});
    ++next_cp;
  }
  out.final_state = {t, z0, z1, z2};
  return out;
}

inline PathResult simulate_path(const ModelParams& p, const ScenarioConfig& s, std::uint64_t seed,
                                std::uint64_t stream, const PathOptions& opt = {}) {
  PhiloxStream rng(seed, stream);
  return simulate_path(p, s, rng, opt);
}

// Writes events as CSV rows: time,event_kind,z0,z1,z2,clone_id
class EventLogWriter {
 public:
  explicit EventLogWriter(std::ostream& os) : os_(os) { os_ << "time,event_kind,z0,z1,z2,clone_id\n"; }

  void operator()(const EventRecord& e) const {
    os_ << io::format_number(e.t) << ',' << event_kind_name(e.kind) << ',' << e.z0 << ',' << e.z1 << ','
        << e.z2 << ',' << e.clone_id << '\n';
  }

 private:
  std::ostream& os_;
};

// Size at time t of a birth-death clone started from one cell.
inline std::uint64_t simulate_clone(double t, const ResistantRates& m, PhiloxStream& rng) {
  std::uint64_t size = 1;
  double now = 0.0;
  const double total = m.r1 + m.d1;
  const double birth_share = m.r1 / total;
  while (size > 0) {
    now += rng.exponential(static_cast<double>(size) * total);
    if (now > t) break;
    if (rng.uniform() < birth_share) ++size;
    else --size;
  }
  return size;
}

struct DeterministicSensitiveResult {
  CloneLedger ledger;
  double T = 0.0;  // reference time
  CloneCounts counts;
  std::uint64_t surviving_mass = 0;  // acquired mutants at T in surviving clones
  std::uint64_t extinct_mass = 0;    // always 0 at T: extinct clones hold no cells
  double gamma = kInfinity;          // first time z2 > a n, if before T
  bool gamma_censored = true;
  std::uint64_t events = 0;
};

// Acquired mutants only, with the sensitive population frozen at its mean
// n e^{-rt}: clone arrivals form a Poisson process of intensity
// mu n^(1-alpha) e^{-rt}, sampled by inverting its cumulative intensity.
// Requires X(n) = 0. Runs until T.
inline DeterministicSensitiveResult simulate_deterministic_sensitive(const ModelParams& p,
                                                                     const ScenarioConfig& s, double T,
                                                                     PhiloxStream& rng,
                                                                     std::uint64_t event_cap = 100000000) {
  if (p.initial_mutants(s.n) != 0)
    throw std::invalid_argument("simulate_deterministic_sensitive requires X(n) = 0");
  const double r = p.r();
  const double kappa = p.mutation.influx_scale(s.n);
  const double total_intensity = kappa / r;
  const double an = s.a * static_cast<double>(s.n);
  const double m_total = p.resistant.r1 + p.resistant.d1;
  const double birth_share = p.resistant.r1 / m_total;

  DeterministicSensitiveResult out;
  out.T = T;
  auto& ledger = out.ledger;

  double cumulative = 0.0;
  auto next_arrival = [&]() {
    cumulative += rng.exponential(1.0);
    if (cumulative >= total_intensity) return kInfinity;
    return -std::log1p(-r * cumulative / kappa) / r;
  };

  double t = 0.0;
  double t_arrival = next_arrival();
  while (true) {
    const double mass = static_cast<double>(ledger.live_mass());
    const double t_event = mass > 0.0 ? t + rng.exponential(mass * m_total) : kInfinity;
    const double t_next = std::min(t_arrival, t_event);
    if (!(t_next <= T)) break;
    if (++out.events > event_cap) throw EventCapError("simulate_deterministic_sensitive: event cap reached");
    t = t_next;
    if (t_arrival <= t_event) {
      ledger.add_clone(t);
      t_arrival = next_arrival();
    } else {
      const auto cell = static_cast<std::uint64_t>(rng.uniform() * mass);
      const auto id = ledger.clone_of_cell(std::min(cell, ledger.live_mass() - 1));
      if (rng.uniform() < birth_share) ledger.birth(id);
      else ledger.death(id, t);
    }
    if (out.gamma_censored && static_cast<double>(ledger.live_mass()) > an) {
      out.gamma = t;
      out.gamma_censored = false;
    }
  }
  out.counts = ledger.counts();
  out.surviving_mass = ledger.live_mass();
  return out;
}

// Inverse-transform sampler for the arrival time s in [0, T] of a clone
// that survives to T, density proportional to P(survive T - s) e^{-rs}.
class ArrivalSampler {
 public:
  ArrivalSampler(double T, const ModelParams& p, std::size_t cells = 256)
      : T_(T), r_(p.r()), m_(p.resistant) {
    if (!(T > 0.0)) throw std::invalid_argument("ArrivalSampler: T must be positive");
    grid_.resize(cells + 1);
    cdf_.resize(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) grid_[i] = T * static_cast<double>(i) / static_cast<double>(cells);
    cdf_[0] = 0.0;
    for (std::size_t i = 0; i < cells; ++i) cdf_[i + 1] = cdf_[i] + cell_mass(grid_[i], grid_[i + 1]);
    total_ = cdf_.back();
  }

  double density(double s) const { return survival_probability(T_ - s, m_) * std::exp(-r_ * s); }
  double normalizer() const { return total_; }

  // Quantile of level u in (0, 1), to 1e-10 in s.
  double quantile(double u) const {
    const double target = u * total_;
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    const std::size_t i = std::min<std::size_t>(
        static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf_.begin() - 1, 0)), grid_.size() - 2);
    double lo = grid_[i];
    double hi = grid_[i + 1];
    const double base = cdf_[i];
    // Newton from the linear interpolant, safeguarded by the cell bracket.
    double s = lo + (hi - lo) * (target - base) / std::max(cdf_[i + 1] - base, 1e-300);
    for (int k = 0; k < 60; ++k) {
      const double g = base + cell_mass(grid_[i], s) - target;
      if (g > 0.0) hi = s;
      else lo = s;
      double next = s - g / density(s);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      const bool done = std::abs(next - s) < 1e-12 || hi - lo < 1e-12;
      s = next;
      if (done) break;
    }
    return s;
  }

  double sample(PhiloxStream& rng) const { return quantile(rng.uniform()); }

 private:
  double cell_mass(double a, double b) const {
    if (b <= a) return 0.0;
    return boost::math::quadrature::gauss<double, 20>::integrate([&](double s) { return density(s); }, a, b);
  }

  double T_, r_;
  ResistantRates m_;
  std::vector<double> grid_, cdf_;
  double total_ = 0.0;
};

struct ConditionedCloneDraw {
  double arrival = 0.0;
  std::uint64_t attempts = 0;  // clone paths simulated until one survived
  std::uint64_t size = 0;
};

struct ConditionedCloneSample {
  std::uint64_t mass = 0;  // total surviving-clone mass at T
  std::vector<ConditionedCloneDraw> clones;
};

// K surviving clones at T: arrival times drawn from the survival-weighted
// density, each clone simulated until it is alive at T (rejection).
inline ConditionedCloneSample simulate_conditioned_clones(std::uint64_t K, const ArrivalSampler& arrivals,
                                                          double T, const ModelParams& p,
                                                          PhiloxStream& rng) {
  ConditionedCloneSample out;
  out.clones.reserve(K);
  for (std::uint64_t k = 0; k < K; ++k) {
    ConditionedCloneDraw d;
    d.arrival = arrivals.sample(rng);
    do {
      ++d.attempts;
      d.size = simulate_clone(T - d.arrival, p.resistant, rng);
    } while (d.size == 0);
    out.mass += d.size;
    out.clones.push_back(d);
  }
  return out;
}

inline ConditionedCloneSample simulate_conditioned_clones(std::uint64_t K, double T, const ModelParams& p,
                                                          PhiloxStream& rng) {
  if (K == 0) return {};
  const ArrivalSampler arrivals(T, p);
  return simulate_conditioned_clones(K, arrivals, T, p, rng);
}

}  // namespace ldbranch
