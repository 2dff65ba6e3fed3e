#pragma once

// Monte Carlo campaigns that confront the simulator with the analytic
// module and the rate functions: moment checks, convergence of passage
// times to their targets, tail-probability regression, and clone counts
// conditioned on early recurrence.

#include "ldbranch/analytic.hpp"
#include "ldbranch/io.hpp"
#include "ldbranch/params.hpp"
#include "ldbranch/ratefn.hpp"
#include "ldbranch/rng.hpp"
#include "ldbranch/simulate.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ldbranch {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Cell {
  std::string label;
  std::string group;  // e.g. "n=1000" or "t=5"
  double estimate = 0.0;
  double std_error = 0.0;
  double reference = kNaN;  // analytic or predicted value, NaN if none
  double statistic = kNaN;  // z-score or relative error, per experiment
  double tolerance = kNaN;
  bool pass = true;
};

enum class Verdict { pass, fail, inconclusive, none };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
    case Verdict::none: return "none";
  }
  return "?";
}

// Wall time is kept on the report but never serialized, so that repeated
// runs produce identical bytes.
struct ExperimentReport {
  std::string tag;
  nlohmann::ordered_json parameters;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
  std::vector<Cell> cells;
  Verdict verdict = Verdict::none;
  std::vector<std::string> notes;
  double wall_seconds = 0.0;

  bool passed() const { return verdict == Verdict::pass || verdict == Verdict::none; }
};

inline nlohmann::ordered_json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline nlohmann::ordered_json params_json(const ModelParams& p) {
  nlohmann::ordered_json j;
  j["r0"] = p.sensitive.r0;
  j["d0"] = p.sensitive.d0;
  j["r1"] = p.resistant.r1;
  j["d1"] = p.resistant.d1;
  j["mu"] = p.mutation.mu;
  j["alpha"] = p.mutation.alpha;
  j["regime"] = regime_name(p.regime);
  if (const auto* pre = std::get_if<regime::PreExisting>(&p.regime)) j["beta"] = pre->beta;
  if (const auto* sub = std::get_if<regime::SubThreshold>(&p.regime)) j["x_exponent"] = sub->exponent;
  return j;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.tag;
  j["parameters"] = r.parameters;
  j["replicates"] = r.replicates;
  j["seed"] = r.seed;
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json cj;
    cj["label"] = c.label;
    cj["group"] = c.group;
    cj["estimate"] = json_number(c.estimate);
    cj["std_error"] = json_number(c.std_error);
    cj["reference"] = json_number(c.reference);
    cj["statistic"] = json_number(c.statistic);
    cj["tolerance"] = json_number(c.tolerance);
    cj["pass"] = c.pass;
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  j["verdict"] = verdict_name(r.verdict);
  j["notes"] = r.notes;
  return j;
}

// Aligned text table, one row per cell.
inline void write_table(std::ostream& os, const ExperimentReport& r) {
  os << "experiment " << r.tag << "  replicates " << r.replicates << "  seed " << r.seed << "  verdict "
     << verdict_name(r.verdict) << '\n';
  const char* heads[] = {"group", "label", "estimate", "std_error", "reference", "statistic", "tolerance", "pass"};
  std::vector<std::vector<std::string>> rows;
  rows.push_back({heads, heads + 8});
  for (const auto& c : r.cells)
    rows.push_back({c.group, c.label, io::format_number(c.estimate), io::format_number(c.std_error),
                    io::format_number(c.reference), io::format_number(c.statistic), io::format_number(c.tolerance),
                    c.pass ? "yes" : "no"});
  std::vector<std::size_t> width(8, 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      os << (i + 1 < row.size() ? "  " : "\n");
    }
  }
  for (const auto& note : r.notes) os << "note: " << note << '\n';
}

// One row of the optional raw per-replicate dump.
struct ReplicateRow {
  std::uint64_t replicate = 0;
  std::string group;
  double gamma = kInfinity;
  double tau = kInfinity;
  bool censored_gamma = true;
  bool censored_tau = true;
  std::int64_t S = -1;  // -1: not recorded
  std::int64_t E = -1;
};

inline void write_raw_csv(std::ostream& os, const std::vector<ReplicateRow>& rows) {
  os << "replicate,group,gamma,tau,censored_gamma,censored_tau,S,E\n";
  auto count = [](std::int64_t v) { return v < 0 ? std::string() : std::to_string(v); };
  for (const auto& r : rows)
    os << r.replicate << ',' << r.group << ',' << io::format_number(r.gamma) << ',' << io::format_number(r.tau)
       << ',' << (r.censored_gamma ? 1 : 0) << ',' << (r.censored_tau ? 1 : 0) << ',' << count(r.S) << ','
       << count(r.E) << '\n';
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Runs f(i) for i in [0, count) on a pool of threads; results land at their
// index, so the output does not depend on scheduling.
template <class R, class F>
std::vector<R> run_replicates(std::uint64_t count, unsigned threads, F&& f) {
  std::vector<R> out(count);
  std::atomic<std::uint64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::uint64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[i] = f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  const unsigned n = static_cast<unsigned>(std::min<std::uint64_t>(resolve_threads(threads), std::max<std::uint64_t>(count, 1)));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (unsigned k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

// Stream index for replicate i of grid cell g; cells never share streams.
inline std::uint64_t stream_id(std::uint64_t cell, std::uint64_t replicate) { return (cell << 40) | replicate; }

namespace stats {

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;    // unbiased sample variance
  double mean_se = 0.0;     // sqrt(variance / N)
  double variance_se = 0.0; // sqrt((m4 - s^4) / N)
};

inline MeanVar summarize(const std::vector<double>& x) {
  MeanVar out;
  const double n = static_cast<double>(x.size());
  if (x.empty()) return out;
  double sum = 0.0;
  for (double v : x) sum += v;
  out.mean = sum / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - out.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  out.variance = x.size() > 1 ? m2 / (n - 1.0) : 0.0;
  out.mean_se = std::sqrt(out.variance / n);
  const double s2 = m2 / n;
  out.variance_se = std::sqrt(std::max(0.0, m4 / n - s2 * s2) / n);
  return out;
}

// Order statistic at level p (sorted input) and a distribution-free
// standard error from the binomial spread of the rank.
struct Quantile {
  double value = kNaN;
  double std_error = kNaN;
};

inline Quantile quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return {};
  const double n = static_cast<double>(sorted.size());
  auto at = [&](double rank) {
    const double k = std::clamp(std::ceil(rank) - 1.0, 0.0, n - 1.0);
    return sorted[static_cast<std::size_t>(k)];
  };
  const double spread = std::sqrt(n * p * (1.0 - p));
  return {at(n * p), 0.5 * (at(n * p + spread) - at(n * p - spread))};
}

// z-score of an estimate against a reference; an exact match with zero
// standard error scores 0, any mismatch with zero error is infinite.
inline double z_score(double estimate, double reference, double se) {
  const double diff = estimate - reference;
  if (se > 0.0) return diff / se;
  return std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(reference)) ? 0.0 : kInfinity;
}

struct ChiSquare {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  std::size_t bins = 0;
};

// Goodness of fit of integer counts to Poisson(mean); adjacent bins are
// merged until every expected count is at least 5.
inline ChiSquare poisson_chi_square(const std::vector<std::uint64_t>& counts, double mean) {
  ChiSquare out;
  const double total = static_cast<double>(counts.size());
  if (counts.empty() || !(mean > 0.0)) return out;
  std::map<std::uint64_t, double> observed;
  std::uint64_t top = 0;
  for (auto c : counts) {
    observed[c] += 1.0;
    top = std::max(top, c);
  }
  const boost::math::poisson_distribution<double> law(mean);
  std::vector<double> obs, exp;
  double o = 0.0, e = 0.0;
  const std::uint64_t last = std::max<std::uint64_t>(top, static_cast<std::uint64_t>(mean + 10.0 * std::sqrt(mean) + 10.0));
  for (std::uint64_t k = 0; k <= last; ++k) {
    o += observed.count(k) ? observed[k] : 0.0;
    e += total * boost::math::pdf(law, static_cast<double>(k));
    if (e >= 5.0) {
      obs.push_back(o);
      exp.push_back(e);
      o = e = 0.0;
    }
  }
  // Upper tail beyond `last` goes into the final bin.
  e += total * boost::math::cdf(boost::math::complement(law, static_cast<double>(last)));
  if (obs.empty()) {
    obs.push_back(o);
    exp.push_back(e);
  } else {
    obs.back() += o;
    exp.back() += e;
  }
  for (std::size_t i = 0; i < obs.size(); ++i) out.statistic += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
  out.bins = obs.size();
  out.dof = static_cast<double>(obs.size()) - 1.0;
  if (out.dof >= 1.0) {
    const boost::math::chi_squared_distribution<double> chi(out.dof);
    out.p_value = boost::math::cdf(boost::math::complement(chi, out.statistic));
  }
  return out;
}

// Ordinary least squares of y on x with intercept. The slope variance
// propagates independent per-point variances var_y.
struct Regression {
  double slope = kNaN;
  double intercept = kNaN;
  double slope_se = kNaN;
};

inline Regression ols(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& var_y) {
  Regression out;
  const std::size_t n = x.size();
  if (n < 2) return out;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = (x[i] - mx) / sxx;
    v += w * w * var_y[i];
  }
  out.slope_se = std::sqrt(v);
  return out;
}

}  // namespace stats

struct RunOptions {
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: hardware concurrency
  bool keep_raw = false;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------- moments

struct MomentValidationResult {
  ExperimentReport report;
  double max_mean_z = 0.0;
  double max_variance_z = 0.0;
};

inline MomentValidationResult moment_validation(const ModelParams& p, std::uint64_t n,
                                                std::vector<double> checkpoints, std::uint64_t replicates,
                                                const RunOptions& run = {}) {
  const Stopwatch clock;
  if (replicates < 2) throw std::invalid_argument("moment_validation needs at least 2 replicates");
  std::sort(checkpoints.begin(), checkpoints.end());
  if (checkpoints.empty() || checkpoints.front() < 0.0)
    throw std::invalid_argument("moment_validation: checkpoints must be nonnegative and nonempty");
  ScenarioConfig s;
  s.n = n;
  PathOptions opt;
  opt.checkpoints = checkpoints;
  opt.horizon = checkpoints.back();
  opt.stop_at_passages = false;

  using Snapshots = std::vector<PopulationSnapshot>;
  const auto paths = run_replicates<Snapshots>(replicates, run.threads, [&](std::uint64_t i) {
    PhiloxStream rng(run.seed, stream_id(0, i));
    return simulate_path(p, s, rng, opt).checkpoints;
  });

  MomentValidationResult out;
  auto& rep = out.report;
  rep.tag = "moments";
  rep.parameters = params_json(p);
  rep.parameters["n"] = n;
  rep.parameters["checkpoints"] = checkpoints;
  rep.replicates = replicates;
  rep.seed = run.seed;

  bool ok = true;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const double t = checkpoints[c];
    const std::string group = "t=" + io::format_number(t);
    for (auto pop : {Population::sensitive, Population::pre_existing, Population::acquired}) {
      std::vector<double> x(replicates);
      for (std::uint64_t i = 0; i < replicates; ++i) {
        const auto& snap = paths[i][c];
        x[i] = static_cast<double>(pop == Population::sensitive      ? snap.z0
                                   : pop == Population::pre_existing ? snap.z1
                                                                     : snap.z2);
      }
      const auto mv = stats::summarize(x);
      Cell mean_cell{std::string("mean_") + population_name(pop), group, mv.mean, mv.mean_se,
                     mean_population(pop, t, p, n)};
      mean_cell.statistic = stats::z_score(mv.mean, mean_cell.reference, mv.mean_se);
      mean_cell.tolerance = 3.0;
      mean_cell.pass = std::abs(mean_cell.statistic) <= 3.0;
      out.max_mean_z = std::max(out.max_mean_z, std::abs(mean_cell.statistic));
      ok = ok && mean_cell.pass;
      rep.cells.push_back(mean_cell);
      if (pop == Population::acquired) continue;
      Cell var_cell{std::string("var_") + population_name(pop), group, mv.variance, mv.variance_se,
                    variance_population(pop, t, p, n)};
      var_cell.statistic = stats::z_score(mv.variance, var_cell.reference, mv.variance_se);
      var_cell.tolerance = 4.0;
      var_cell.pass = std::abs(var_cell.statistic) <= 4.0;
      out.max_variance_z = std::max(out.max_variance_z, std::abs(var_cell.statistic));
      ok = ok && var_cell.pass;
      rep.cells.push_back(var_cell);
    }
  }
  rep.verdict = ok ? Verdict::pass : Verdict::fail;
  rep.wall_seconds = clock.seconds();
  return out;
}

// ------------------------------------------------------------ convergence

struct DeviationSummary {
  std::uint64_t n = 0;
  double target = 0.0;
  std::uint64_t censored = 0;
  stats::Quantile q50, q90, q99;
};

struct ConvergenceResult {
  ExperimentReport report;
  std::vector<DeviationSummary> recurrence;  // |gamma - zeta|
  std::vector<DeviationSummary> crossover;   // |tau - xi|
  std::vector<ReplicateRow> raw;
};

namespace detail {

// Non-increasing across the grid, with at most one increase that stays
// within two combined standard errors.
inline bool non_increasing_with_slack(const std::vector<DeviationSummary>& rows, std::string& why) {
  int inversions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double up = rows[i].q90.value - rows[i - 1].q90.value;
    if (up <= 0.0) continue;
    const double se = std::hypot(rows[i - 1].q90.std_error, rows[i].q90.std_error);
    ++inversions;
    if (up > 2.0 * se) {
      why = "90% quantile rises by " + io::format_number(up) + " > 2 SE at n=" + std::to_string(rows[i].n);
      return false;
    }
  }
  if (inversions > 1) {
    why = std::to_string(inversions) + " inversions of the 90% quantile";
    return false;
  }
  return true;
}

}  // namespace detail

inline ConvergenceResult convergence_experiment(const ModelParams& p, double a, const std::vector<std::uint64_t>& n_grid,
                                                std::uint64_t replicates, const RunOptions& run = {},
                                                double horizon_multiplier = 3.0) {
  const Stopwatch clock;
  if (!(p.mutation.mu > 0.0)) throw std::invalid_argument("convergence_experiment: mu = 0 means no recurrence");
  if (n_grid.empty()) throw std::invalid_argument("convergence_experiment: empty n grid");
  for (std::size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1]) throw std::invalid_argument("convergence_experiment: n grid must increase");
  if (replicates == 0) throw std::invalid_argument("convergence_experiment: no replicates");

  ConvergenceResult out;
  auto& rep = out.report;
  rep.tag = "convergence";
  rep.parameters = params_json(p);
  rep.parameters["a"] = a;
  rep.parameters["n_grid"] = n_grid;
  rep.parameters["horizon_multiplier"] = horizon_multiplier;
  rep.replicates = replicates;
  rep.seed = run.seed;

  bool censoring_ok = true;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    ScenarioConfig s;
    s.n = n_grid[g];
    s.a = a;
    s.horizon_multiplier = horizon_multiplier;
    const auto targets = solve_targets(p, s);
    PathOptions opt;
    opt.ledger = run.keep_raw;
    const auto passages = run_replicates<ReplicateRow>(replicates, run.threads, [&](std::uint64_t i) {
      PhiloxStream rng(run.seed, stream_id(g, i));
      const auto path = simulate_path(p, s, rng, opt);
      ReplicateRow row{i, "n=" + std::to_string(s.n), path.passage.gamma, path.passage.tau,
                       path.passage.gamma_censored, path.passage.tau_censored};
      if (path.ledger) {
        const auto counts = path.ledger->counts();
        row.S = static_cast<std::int64_t>(counts.surviving);
        row.E = static_cast<std::int64_t>(counts.extinct);
      }
      return row;
    });
    if (run.keep_raw) out.raw.insert(out.raw.end(), passages.begin(), passages.end());

    auto summarize = [&](bool recurrence) {
      DeviationSummary d;
      d.n = s.n;
      d.target = recurrence ? targets.zeta : targets.xi;
      std::vector<double> dev;
      dev.reserve(replicates);
      for (const auto& row : passages) {
        const bool censored = recurrence ? row.censored_gamma : row.censored_tau;
        if (censored) {
          ++d.censored;
          continue;
        }
        dev.push_back(std::abs((recurrence ? row.gamma : row.tau) - d.target));
      }
      std::sort(dev.begin(), dev.end());
      d.q50 = stats::quantile(dev, 0.5);
      d.q90 = stats::quantile(dev, 0.9);
      d.q99 = stats::quantile(dev, 0.99);
      return d;
    };

    const std::string group = "n=" + std::to_string(s.n);
    for (bool recurrence : {true, false}) {
      const auto d = summarize(recurrence);
      const std::string name = recurrence ? "recurrence" : "crossover";
      const double frac = static_cast<double>(d.censored) / static_cast<double>(replicates);
      Cell cens{name + "_censored_fraction", group, frac,
                std::sqrt(frac * (1.0 - frac) / static_cast<double>(replicates)), kNaN, kNaN, 0.01, frac <= 0.01};
      censoring_ok = censoring_ok && cens.pass;
      rep.cells.push_back(cens);
      rep.cells.push_back({name + "_target", group, d.target, 0.0});
      rep.cells.push_back({name + "_q50", group, d.q50.value, d.q50.std_error});
      rep.cells.push_back({name + "_q90", group, d.q90.value, d.q90.std_error});
      rep.cells.push_back({name + "_q99", group, d.q99.value, d.q99.std_error});
      (recurrence ? out.recurrence : out.crossover).push_back(d);
    }
  }

  if (!censoring_ok) {
    rep.verdict = Verdict::fail;
    rep.notes.push_back("censoring above 1%");
  } else if (n_grid.size() < 2) {
    rep.verdict = Verdict::none;
    rep.notes.push_back("single n: no trend verdict");
  } else {
    std::string why;
    const bool rec = detail::non_increasing_with_slack(out.recurrence, why);
    if (!rec) rep.notes.push_back("recurrence: " + why);
    const bool cross = detail::non_increasing_with_slack(out.crossover, why);
    if (!cross) rep.notes.push_back("crossover: " + why);
    rep.verdict = rec && cross ? Verdict::pass : Verdict::fail;
  }
  rep.wall_seconds = clock.seconds();
  return out;
}

// ------------------------------------------------------- tail probability

struct TailPoint {
  std::uint64_t n = 0;
  double speed = 0.0;  // n^c
  std::uint64_t hits = 0;
  double p_hat = 0.0;
  double p_se = 0.0;
  bool usable = false;
};

struct TailRegression {
  std::vector<TailPoint> points;
  stats::Regression fit;
  double predicted = kNaN;  // rate function at y
  double relative_error = kNaN;
  bool usable = false;
};

struct TailResult {
  ExperimentReport report;
  TailRegression recurrence;
  TailRegression crossover;
  std::vector<ReplicateRow> raw;
};

inline TailResult tail_probability_experiment(const ModelParams& p, double a, double y,
                                              const std::vector<std::uint64_t>& n_grid, std::uint64_t replicates,
                                              const RunOptions& run = {}, double slope_tolerance = 0.5) {
  const Stopwatch clock;
  if (!(y > 0.0)) throw std::invalid_argument("tail_probability_experiment requires y > 0");
  if (n_grid.empty() || replicates == 0) throw std::invalid_argument("tail_probability_experiment: empty grid");
  const LdCase ld_case = case_of(p.regime);
  const double c = p.speed_exponent();

  TailResult out;
  auto& rep = out.report;
  rep.tag = "tail";
  rep.parameters = params_json(p);
  rep.parameters["a"] = a;
  rep.parameters["y"] = y;
  rep.parameters["n_grid"] = n_grid;
  rep.parameters["speed_exponent"] = c;
  rep.replicates = replicates;
  rep.seed = run.seed;
  out.recurrence.predicted = recurrence_rate(ld_case, y, p).value;
  out.crossover.predicted = crossover_rate(ld_case, y, p).value;

  const double n_reps = static_cast<double>(replicates);
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    ScenarioConfig s;
    s.n = n_grid[g];
    s.a = a;
    s.y = y;
    const auto targets = solve_targets(p, s);
    const double rec_cut = targets.zeta - y;
    const double cross_cut = targets.xi - y;
    PathOptions opt;
    opt.ledger = run.keep_raw;
    opt.horizon = std::max(rec_cut, cross_cut);
    const std::string group = "n=" + std::to_string(s.n);
    std::vector<ReplicateRow> rows;
    if (opt.horizon > 0.0) {
      rows = run_replicates<ReplicateRow>(replicates, run.threads, [&](std::uint64_t i) {
        PhiloxStream rng(run.seed, stream_id(g, i));
        const auto path = simulate_path(p, s, rng, opt);
        ReplicateRow row{i, group, path.passage.gamma, path.passage.tau, path.passage.gamma_censored,
                         path.passage.tau_censored};
        if (path.ledger) {
          const auto counts = path.ledger->counts();
          row.S = static_cast<std::int64_t>(counts.surviving);
          row.E = static_cast<std::int64_t>(counts.extinct);
        }
        return row;
      });
    } else {
      rep.notes.push_back(group + ": target minus y is not positive, no early event possible");
    }
    if (run.keep_raw) out.raw.insert(out.raw.end(), rows.begin(), rows.end());

    for (bool recurrence : {true, false}) {
      TailPoint pt;
      pt.n = s.n;
      pt.speed = std::exp(c * std::log(static_cast<double>(s.n)));
      const double cut = recurrence ? rec_cut : cross_cut;
      for (const auto& row : rows) {
        const bool censored = recurrence ? row.censored_gamma : row.censored_tau;
        const double t = recurrence ? row.gamma : row.tau;
        if (!censored && t <= cut) ++pt.hits;
      }
      pt.p_hat = static_cast<double>(pt.hits) / n_reps;
      pt.p_se = std::sqrt(pt.p_hat * (1.0 - pt.p_hat) / n_reps);
      pt.usable = pt.hits > 0 && pt.hits < replicates;
      const std::string name = recurrence ? "recurrence" : "crossover";
      if (pt.hits == 0) rep.notes.push_back(name + " " + group + ": zero events, excluded");
      if (pt.hits == replicates) rep.notes.push_back(name + " " + group + ": every path early, excluded");
      rep.cells.push_back({name + "_p_hat", group, pt.p_hat, pt.p_se});
      (recurrence ? out.recurrence : out.crossover).points.push_back(pt);
    }
  }

  bool ok = true;
  const double guard = 10.0 / n_reps;
  for (auto* reg : {&out.recurrence, &out.crossover}) {
    const std::string name = reg == &out.recurrence ? "recurrence" : "crossover";
    if (reg->points.back().p_hat < guard) {
      rep.notes.push_back(name + ": p_hat at the largest n is below 10/replicates");
      ok = false;
    }
    std::vector<double> x, yv, var;
    for (const auto& pt : reg->points) {
      if (!pt.usable) continue;
      x.push_back(pt.speed);
      yv.push_back(-std::log(pt.p_hat));
      var.push_back((1.0 - pt.p_hat) / (n_reps * pt.p_hat));  // delta method for -log p_hat
    }
    reg->usable = x.size() >= 3;
    if (!reg->usable) {
      rep.notes.push_back(name + ": fewer than 3 usable points, no regression");
      ok = false;
      continue;
    }
    reg->fit = stats::ols(x, yv, var);
    reg->relative_error = std::abs(reg->fit.slope - reg->predicted) / reg->predicted;
    Cell slope{name + "_slope", "fit", reg->fit.slope, reg->fit.slope_se, reg->predicted, reg->relative_error,
               slope_tolerance};
    slope.pass = reg->fit.slope > 0.0 && reg->relative_error <= slope_tolerance;
    ok = ok && slope.pass;
    rep.cells.push_back(slope);
    rep.cells.push_back({name + "_intercept", "fit", reg->fit.intercept, kNaN});
  }
  if (out.recurrence.usable && out.crossover.usable) {
    const double gap = out.crossover.fit.slope - out.recurrence.fit.slope;
    Cell order{"crossover_minus_recurrence_slope", "fit", gap,
               std::hypot(out.crossover.fit.slope_se, out.recurrence.fit.slope_se), kNaN, kNaN, 0.0, gap > 0.0};
    ok = ok && order.pass;
    rep.cells.push_back(order);
  }
  rep.verdict = ok ? Verdict::pass : Verdict::fail;
  rep.wall_seconds = clock.seconds();
  return out;
}

// ------------------------------------------------------ conditioned clones

struct CloneHistogram {
  std::map<std::uint64_t, std::uint64_t> counts;
  std::uint64_t total = 0;
  double mean = kNaN;
  double mean_se = kNaN;
  std::uint64_t mode = 0;

  void add(std::uint64_t k) {
    ++counts[k];
    ++total;
  }
  void finish() {
    if (total == 0) return;
    std::uint64_t best = 0;
    double sum = 0.0, sum2 = 0.0;
    for (const auto& [k, c] : counts) {
      if (c > best) {
        best = c;
        mode = k;
      }
      sum += static_cast<double>(k) * static_cast<double>(c);
      sum2 += static_cast<double>(k) * static_cast<double>(k) * static_cast<double>(c);
    }
    const double n = static_cast<double>(total);
    mean = sum / n;
    const double var = total > 1 ? (sum2 - n * mean * mean) / (n - 1.0) : 0.0;
    mean_se = std::sqrt(std::max(0.0, var) / n);
  }
};

struct ConditionedCloneResult {
  ExperimentReport report;
  double T = 0.0;
  double mean_clone_count = 0.0;  // clone_count_mean(T)
  double limit_scale = 0.0;       // (l1 mu / (r r1)) n^(1-alpha)
  double a_star_star = kNaN;
  CloneHistogram unconditional;
  CloneHistogram conditional;
  stats::ChiSquare poisson_fit;
  double unconditional_mode_ratio = kNaN;
  double conditional_mode_ratio = kNaN;
  std::vector<ReplicateRow> raw;
};

inline ConditionedCloneResult conditioned_clone_experiment(const ModelParams& p, double a, double y, std::uint64_t n,
                                                           std::uint64_t replicates, const RunOptions& run = {},
                                                           std::uint64_t min_events = 30) {
  const Stopwatch clock;
  if (p.initial_mutants(n) != 0)
    throw std::invalid_argument("conditioned_clone_experiment requires X(n) = 0");
  if (!(y > 0.0)) throw std::invalid_argument("conditioned_clone_experiment requires y > 0");
  ScenarioConfig s;
  s.n = n;
  s.a = a;
  s.y = y;
  const auto targets = solve_targets(p, s);

  ConditionedCloneResult out;
  out.T = targets.zeta - y;
  if (!(out.T > 0.0)) throw std::invalid_argument("conditioned_clone_experiment: zeta - y must be positive");
  out.mean_clone_count = clone_count_mean(out.T, p, n);
  out.limit_scale = clone_count_scale(p) * std::exp((1.0 - p.mutation.alpha) * std::log(static_cast<double>(n)));
  out.a_star_star = optimal_clone_factor(y, p).a_star_star;

  struct Outcome {
    CloneCounts counts;
    double gamma = kInfinity;
    bool early = false;
  };
  const auto outcomes = run_replicates<Outcome>(replicates, run.threads, [&](std::uint64_t i) {
    PhiloxStream rng(run.seed, stream_id(0, i));
    const auto r = simulate_deterministic_sensitive(p, s, out.T, rng);
    return Outcome{r.counts, r.gamma, !r.gamma_censored};
  });

  std::vector<std::uint64_t> survivors;
  survivors.reserve(replicates);
  for (std::uint64_t i = 0; i < replicates; ++i) {
    const auto& o = outcomes[i];
    out.unconditional.add(o.counts.surviving);
    survivors.push_back(o.counts.surviving);
    if (o.early) out.conditional.add(o.counts.surviving);
    if (run.keep_raw)
      out.raw.push_back({i, "n=" + std::to_string(n), o.gamma, kInfinity, !o.early, true,
                         static_cast<std::int64_t>(o.counts.surviving), static_cast<std::int64_t>(o.counts.extinct)});
  }
  out.unconditional.finish();
  out.conditional.finish();
  out.poisson_fit = stats::poisson_chi_square(survivors, out.mean_clone_count);
  out.unconditional_mode_ratio = static_cast<double>(out.unconditional.mode) / out.limit_scale;

  auto& rep = out.report;
  rep.tag = "conditioned-clones";
  rep.parameters = params_json(p);
  rep.parameters["n"] = n;
  rep.parameters["a"] = a;
  rep.parameters["y"] = y;
  rep.parameters["T"] = out.T;
  rep.replicates = replicates;
  rep.seed = run.seed;

  const std::string group = "n=" + std::to_string(n);
  Cell mean_cell{"unconditional_mean_S", group, out.unconditional.mean, out.unconditional.mean_se,
                 out.mean_clone_count};
  mean_cell.statistic = stats::z_score(mean_cell.estimate, mean_cell.reference, mean_cell.std_error);
  mean_cell.tolerance = 3.0;
  mean_cell.pass = std::abs(mean_cell.statistic) <= 3.0;
  rep.cells.push_back(mean_cell);
  Cell chi{"poisson_chi_square_p_value", group, out.poisson_fit.p_value, kNaN, kNaN, out.poisson_fit.statistic, 0.01,
           out.poisson_fit.p_value >= 0.01};
  rep.cells.push_back(chi);
  rep.cells.push_back({"unconditional_mode_ratio", group, out.unconditional_mode_ratio, kNaN});
  const double early_frac = static_cast<double>(out.conditional.total) / static_cast<double>(replicates);
  rep.cells.push_back({"early_fraction", group, early_frac,
                       std::sqrt(early_frac * (1.0 - early_frac) / static_cast<double>(replicates))});

  bool ok = mean_cell.pass && chi.pass;
  if (out.conditional.total < min_events) {
    rep.notes.push_back("only " + std::to_string(out.conditional.total) + " early paths, need " +
                        std::to_string(min_events));
    rep.verdict = ok ? Verdict::inconclusive : Verdict::fail;
  } else {
    out.conditional_mode_ratio = static_cast<double>(out.conditional.mode) / out.limit_scale;
    rep.cells.push_back({"conditional_mode_ratio", group, out.conditional_mode_ratio, kNaN, out.a_star_star});
    rep.cells.push_back({"conditional_mean_ratio", group, out.conditional.mean / out.limit_scale,
                         out.conditional.mean_se / out.limit_scale, out.a_star_star});
    Cell shift{"conditional_minus_unconditional_mode_ratio", group,
               out.conditional_mode_ratio - out.unconditional_mode_ratio, kNaN};
    shift.tolerance = 0.0;
    shift.pass = shift.estimate > 0.0;
    rep.cells.push_back(shift);
    ok = ok && shift.pass;
    rep.verdict = ok ? Verdict::pass : Verdict::fail;
  }
  rep.wall_seconds = clock.seconds();
  return out;
}

}  // namespace ldbranch
