#include "ldbranch/analytic.hpp"
#include "ldbranch/simulate.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

using namespace ldbranch;
using ldbranch::testing::slow_params;
using ldbranch::testing::steep_params;

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, int m = 4000) {
  const double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

struct Moments {
  double mean = 0.0, se = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= double(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= double(xs.size() - 1);
  return {m, std::sqrt(v / double(xs.size()))};
}

}  // namespace

TEST(FenwickTree, MatchesBruteForce) {
  std::mt19937_64 gen(1);
  FenwickTree tree;
  std::vector<std::uint64_t> plain;
  for (int step = 0; step < 3000; ++step) {
    if (plain.empty() || gen() % 3 == 0) {
      const std::uint64_t v = gen() % 5;
      tree.push_back(v);
      plain.push_back(v);
    } else {
      const std::size_t i = gen() % plain.size();
      const std::int64_t d = plain[i] > 0 && gen() % 2 ? -1 : 2;
      tree.add(i, d);
      plain[i] = std::uint64_t(std::int64_t(plain[i]) + d);
    }
    if (step % 97 == 0) {
      std::uint64_t running = 0;
      for (std::size_t i = 0; i < plain.size(); ++i) {
        ASSERT_EQ(tree.prefix(i), running);
        for (std::uint64_t u = 0; u < plain[i]; ++u) ASSERT_EQ(tree.find(running + u), i);
        running += plain[i];
      }
    }
  }
  EXPECT_EQ(tree.size(), plain.size());
}

TEST(CloneLedger, Bookkeeping) {
  CloneLedger ledger;
  const auto a = ledger.add_clone(0.5);
  const auto b = ledger.add_clone(1.0);
  ledger.birth(a);
  ledger.birth(a);
  ledger.death(b, 2.0);
  EXPECT_EQ(ledger.live_mass(), 3u);
  EXPECT_EQ(ledger.counts().surviving, 1u);
  EXPECT_EQ(ledger.counts().extinct, 1u);
  EXPECT_EQ(ledger.clones()[b].extinction_time, 2.0);
  EXPECT_EQ(ledger.counts_at(0.7).surviving, 1u);
  EXPECT_EQ(ledger.counts_at(1.5).surviving, 2u);
  EXPECT_EQ(ledger.counts_at(2.5).extinct, 1u);
  for (std::uint64_t k = 0; k < 3; ++k) EXPECT_EQ(ledger.clone_of_cell(k), a);
}

TEST(SimulatePath, NoMutationMeansNoPassage) {
  auto p = slow_params();
  p.mutation.mu = 0.0;
  ScenarioConfig s;
  s.n = 200;
  const auto res = simulate_path(p, s, 1, 0);
  EXPECT_TRUE(res.passage.gamma_censored);
  EXPECT_TRUE(res.passage.tau_censored);
  EXPECT_EQ(res.mutations, 0u);
  EXPECT_EQ(res.final_state.z2, 0u);
}

TEST(SimulatePath, MutationsArePoissonUnderFrozenSensitives) {
  // sensitive cells neither divide nor die, so mutations are Poisson(n m T)
  ModelParams p;
  p.sensitive = {0.0, 1e-12};
  p.resistant = {1e-12, 0.0};
  p.mutation = {0.5, 0.5};
  ScenarioConfig s;
  s.n = 100;
  PathOptions opt;
  opt.horizon = 4.0;
  opt.stop_at_passages = false;
  std::vector<double> counts;
  for (std::uint64_t rep = 0; rep < 3000; ++rep) counts.push_back(double(simulate_path(p, s, 9, rep, opt).mutations));
  const double expected = 100.0 * 0.5 / 10.0 * 4.0;
  const auto m = moments(counts);
  EXPECT_NEAR(m.mean, expected, 4.0 * std::sqrt(expected / 3000.0));
}

TEST(SimulatePath, Deterministic) {
  const auto p = steep_params();
  ScenarioConfig s;
  s.n = 500;
  PathOptions opt;
  opt.ledger = true;
  const auto a = simulate_path(p, s, 3, 5, opt);
  const auto b = simulate_path(p, s, 3, 5, opt);
  const auto c = simulate_path(p, s, 3, 6, opt);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.passage.gamma, b.passage.gamma);
  EXPECT_EQ(a.final_state.t, b.final_state.t);
  EXPECT_NE(a.final_state.t, c.final_state.t);
}

TEST(SimulatePath, PassagesFollowStrictThresholds) {
  auto p = steep_params();
  p.regime = regime::Critical{};
  ScenarioConfig s;
  s.n = 300;
  s.a = 0.5;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    double gamma = kInfinity, tau = kInfinity;
    PathOptions opt;
    opt.on_event = [&](const EventRecord& e) {
      if (std::isinf(gamma) && double(e.z1 + e.z2) > 150.0) gamma = e.t;
      if (std::isinf(tau) && e.z1 + e.z2 > e.z0) tau = e.t;
    };
    const auto res = simulate_path(p, s, 4, rep, opt);
    ASSERT_FALSE(res.passage.gamma_censored);
    EXPECT_EQ(res.passage.gamma, gamma);
    EXPECT_EQ(res.passage.tau, tau);
    EXPECT_LE(res.passage.tau, res.passage.gamma);
  }
}

TEST(SimulatePath, LedgerTracksEveryAcquiredCell) {
  const auto p = steep_params();
  ScenarioConfig s;
  s.n = 400;
  std::map<std::int64_t, std::int64_t> sizes;
  PathOptions opt;
  opt.ledger = true;
  opt.stop_at_passages = false;
  opt.horizon = 3.0;
  std::uint64_t prev_z2 = 0;
  opt.on_event = [&](const EventRecord& e) {
    if (e.z2 != prev_z2) {
      ASSERT_GE(e.clone_id, 0);
      sizes[e.clone_id] += e.z2 > prev_z2 ? 1 : -1;
    }
    prev_z2 = e.z2;
  };
  const auto res = simulate_path(p, s, 8, 0, opt);
  ASSERT_TRUE(res.ledger.has_value());
  const auto& clones = res.ledger->clones();
  ASSERT_EQ(clones.size(), sizes.size());
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < clones.size(); ++i) {
    EXPECT_EQ(std::int64_t(clones[i].size), sizes[std::int64_t(i)]);
    EXPECT_EQ(clones[i].extinct, clones[i].size == 0);
    total += clones[i].size;
  }
  EXPECT_EQ(total, res.final_state.z2);
  const auto c = res.ledger->counts();
  EXPECT_EQ(c.surviving + c.extinct, res.mutations);
}

TEST(SimulatePath, CheckpointsSeeLeftLimits) {
  const auto p = slow_params();
  ScenarioConfig s;
  s.n = 300;
  PathOptions opt;
  opt.checkpoints = {0.0, 1.0, 2.5, 7.0};
  opt.horizon = 8.0;
  opt.stop_at_passages = false;
  std::vector<EventRecord> log;
  opt.on_event = [&](const EventRecord& e) { log.push_back(e); };
  const auto res = simulate_path(p, s, 2, 0, opt);
  ASSERT_EQ(res.checkpoints.size(), 4u);
  EXPECT_EQ(res.checkpoints[0].z0, 300u);
  EXPECT_EQ(res.checkpoints[0].z2, 0u);
  for (const auto& cp : res.checkpoints) {
    std::uint64_t z0 = 300, z2 = 0;
    for (const auto& e : log) {
      if (e.t > cp.t) break;
      z0 = e.z0;
      z2 = e.z2;
    }
    EXPECT_EQ(cp.z0, z0) << cp.t;
    EXPECT_EQ(cp.z2, z2) << cp.t;
  }
}

TEST(SimulatePath, SensitiveMeanAtCheckpoint) {
  const auto p = slow_params();
  ScenarioConfig s;
  s.n = 100;
  PathOptions opt;
  opt.checkpoints = {3.0};
  opt.horizon = 3.0;
  opt.stop_at_passages = false;
  std::vector<double> z0;
  for (std::uint64_t rep = 0; rep < 4000; ++rep) z0.push_back(double(simulate_path(p, s, 6, rep, opt).checkpoints[0].z0));
  const auto m = moments(z0);
  EXPECT_NEAR(m.mean, mean_population(Population::sensitive, 3.0, p, 100), 4.0 * m.se);
}

TEST(SimulatePath, EventCap) {
  const auto p = steep_params();
  ScenarioConfig s;
  s.n = 1000;
  PathOptions opt;
  opt.event_cap = 10;
  EXPECT_THROW(simulate_path(p, s, 1, 0, opt), EventCapError);
}

TEST(SimulateClone, DistributionMatchesPmf) {
  const ResistantRates m{0.4, 0.2};
  const double t = 5.0;
  PhiloxStream rng(17, 0);
  const int reps = 40000;
  std::map<std::uint64_t, int> hist;
  for (int i = 0; i < reps; ++i) ++hist[simulate_clone(t, m, rng)];
  double tv = 0.0, covered = 0.0;
  for (std::uint64_t j = 0; j < 200; ++j) {
    const double pj = clone_pmf(j, t, m);
    covered += pj;
    const auto it = hist.find(j);
    tv += std::abs((it == hist.end() ? 0.0 : double(it->second) / reps) - pj);
  }
  tv = 0.5 * (tv + (1.0 - covered));
  EXPECT_LT(tv, 0.015);
  EXPECT_NEAR(double(hist[0]) / reps, clone_pmf(0, t, m), 4.0 * std::sqrt(0.25 / reps));
}

TEST(DeterministicSensitive, CloneCountsArePoisson) {
  const auto p = slow_params();
  ScenarioConfig s;
  s.n = 10000;
  const double T = 5.0;
  std::vector<double> surviving, born;
  for (std::uint64_t rep = 0; rep < 3000; ++rep) {
    PhiloxStream rng(21, rep);
    const auto res = simulate_deterministic_sensitive(p, s, T, rng);
    surviving.push_back(double(res.counts.surviving));
    born.push_back(double(res.ledger.total_born()));
    ASSERT_EQ(res.surviving_mass, res.ledger.live_mass());
  }
  const double mean_s = clone_count_mean(T, p, s.n);
  const double mean_born = p.mutation.influx_scale(s.n) * -std::expm1(-p.r() * T) / p.r();
  const auto ms = moments(surviving), mb = moments(born);
  EXPECT_NEAR(ms.mean, mean_s, 4.0 * std::sqrt(mean_s / 3000.0));
  EXPECT_NEAR(mb.mean, mean_born, 4.0 * std::sqrt(mean_born / 3000.0));
  // Poisson: variance equals mean
  EXPECT_NEAR(ms.se * ms.se * 3000.0, mean_s, 0.1 * mean_s);
}

TEST(DeterministicSensitive, EdgeCases) {
  auto p = slow_params();
  ScenarioConfig s;
  s.n = 10000;
  PhiloxStream rng(1, 0);
  const auto res = simulate_deterministic_sensitive(p, s, 1e-9, rng);
  EXPECT_EQ(res.ledger.total_born(), 0u);
  EXPECT_TRUE(res.gamma_censored);
  p.regime = regime::Critical{};
  EXPECT_THROW(simulate_deterministic_sensitive(p, s, 1.0, rng), std::invalid_argument);
}

TEST(ArrivalSampler, InvertsTheSurvivalWeightedCdf) {
  const auto p = slow_params();
  const double T = 6.0;
  const ArrivalSampler sampler(T, p);
  auto density = [&](double s) { return survival_probability(T - s, p.resistant) * std::exp(-p.r() * s); };
  const double total = simpson(density, 0.0, T);
  EXPECT_NEAR(sampler.normalizer(), total, 1e-10);
  for (double u : {0.01, 0.3, 0.5, 0.77, 0.999}) {
    const double s = sampler.quantile(u);
    EXPECT_NEAR(simpson(density, 0.0, s) / total, u, 1e-9) << u;
  }
  EXPECT_THROW(ArrivalSampler(0.0, p), std::invalid_argument);
}

TEST(ConditionedClones, MassAndAcceptanceRate) {
  const auto p = slow_params();
  const double T = 5.0;
  const std::uint64_t K = 3;
  const ArrivalSampler arrivals(T, p);
  PhiloxStream rng(12, 0);
  std::vector<double> mass, attempts;
  for (int rep = 0; rep < 6000; ++rep) {
    const auto draw = simulate_conditioned_clones(K, arrivals, T, p, rng);
    mass.push_back(double(draw.mass));
    ASSERT_EQ(draw.clones.size(), K);
    for (const auto& c : draw.clones) {
      ASSERT_GT(c.size, 0u);
      attempts.push_back(double(c.attempts));
    }
  }
  const auto mm = moments(mass), ma = moments(attempts);
  EXPECT_NEAR(mm.mean, conditional_clone_mean(K, T, p), 4.0 * mm.se);
  // E[attempts] = E_s[1 / P(survive T - s)] = (1 - e^{-rT}) / (r * normalizer)
  const double expected = -std::expm1(-p.r() * T) / (p.r() * arrivals.normalizer());
  EXPECT_NEAR(ma.mean, expected, 4.0 * ma.se);
  PhiloxStream other(1, 1);
  EXPECT_TRUE(simulate_conditioned_clones(0, T, p, other).clones.empty());
}

TEST(EventLogWriter, Format) {
  std::ostringstream os;
  EventLogWriter w(os);
  EventRecord e;
  e.t = 0.25;
  e.kind = EventKind::mutation;
  e.z0 = 10;
  e.z1 = 2;
  e.z2 = 1;
  e.clone_id = 0;
  w(e);
  EXPECT_EQ(os.str(), "time,event_kind,z0,z1,z2,clone_id\n0.25,MUTATION,10,2,1,0\n");
}
