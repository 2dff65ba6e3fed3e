#pragma once

// Command-line front end. run_cli() is the whole program; main() only
// forwards argv so tests can drive the CLI in-process.

#include "invariant_suite.hpp"
#include "ldbranch/ldbranch.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldbranch::cli {

namespace fs = std::filesystem;

struct Failure {
  std::string key;
  std::string message;
};

// Raised for any problem that should end the run with exit status 1.
class CliFailure : public std::runtime_error {
 public:
  explicit CliFailure(std::vector<Failure> f) : std::runtime_error(summary(f)), failures_(std::move(f)) {}
  CliFailure(std::string key, std::string message)
      : CliFailure(std::vector<Failure>{{std::move(key), std::move(message)}}) {}
  const std::vector<Failure>& failures() const { return failures_; }

 private:
  static std::string summary(const std::vector<Failure>& f) { return f.empty() ? "failure" : f.front().message; }
  std::vector<Failure> failures_;
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// Collects artifacts in memory, writes them, then writes the manifest.
class ArtifactSet {
 public:
  explicit ArtifactSet(fs::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  void write(const std::string& command, const std::vector<Failure>& failures) const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw CliFailure("out", "cannot create output directory '" + dir_.string() + "'");
    nlohmann::ordered_json manifest;
    manifest["command"] = command;
    auto list = nlohmann::ordered_json::array();
    for (const auto& [name, content] : files_) {
      std::ofstream out(dir_ / name, std::ios::binary);
      out << content;
      if (!out) throw CliFailure("out", "cannot write '" + (dir_ / name).string() + "'");
      list.push_back({{"path", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    }
    manifest["artifacts"] = std::move(list);
    manifest["status"] = failures.empty() ? "ok" : "failed";
    auto fl = nlohmann::ordered_json::array();
    for (const auto& f : failures) fl.push_back({{"key", f.key}, {"message", f.message}});
    manifest["failures"] = std::move(fl);
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) throw CliFailure("out", "cannot write manifest");
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

struct Grid {
  double from = 0.0;
  double to = 0.0;
  double step = 0.01;

  std::vector<double> values() const {
    const auto count = static_cast<std::int64_t>(std::floor((to - from) / step + 1e-9)) + 1;
    std::vector<double> v;
    for (std::int64_t i = 0; i < count; ++i) v.push_back(from + static_cast<double>(i) * step);
    return v;
  }
};

inline void check_grid(const Grid& g, const std::string& name) {
  if (!(g.step > 0.0) || !std::isfinite(g.from) || !std::isfinite(g.to) || g.to < g.from)
    throw CliFailure(name, "sweep needs finite from <= to and step > 0");
}

inline std::vector<std::uint64_t> parse_n_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = ldbranch::detail::parse_u64(ldbranch::detail::trim(item));
    if (!v || *v == 0) throw CliFailure("n-grid", "bad population size '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = ldbranch::detail::parse_double(ldbranch::detail::trim(item));
    if (!v) throw CliFailure(key, "bad number '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

struct Options {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  unsigned threads = 0;
  std::map<std::string, std::string> overrides;

  // rate-curve
  int ld_case = 1;
  std::string quantity = "recurrence";
  std::string sweep = "y";
  std::optional<double> sweep_from, sweep_to;
  double sweep_step = 0.01;
  double clone_factor = 1.0;

  // ratio-curve
  Grid betas{0.01, 0.0, 0.01};
  bool betas_to_set = false;

  // clone-optimum
  Grid clone_ys{0.5, 3.0, 0.5};

  // simulate
  std::uint64_t sim_replicates = 1;
  bool event_log = false;

  // experiment
  std::string experiment;
  std::uint64_t replicates = 1000;
  std::string n_grid;
  std::string checkpoints = "2,5,10";
  bool raw = false;
};

inline Config resolve_config(const Options& o) {
  ConfigValues overrides = o.overrides;
  if (o.seed) overrides["seed"] = std::to_string(*o.seed);
  try {
    return load_config(o.config_path, overrides);
  } catch (const ConfigError& e) {
    std::vector<Failure> f;
    for (const auto& i : e.issues()) f.push_back({i.key, i.message});
    throw CliFailure(std::move(f));
  } catch (const ValidationError& e) {
    std::vector<Failure> f;
    for (const auto& v : e.violations()) f.push_back({v.field, v.message + " (observed " + io::format_number(v.observed) + ")"});
    throw CliFailure(std::move(f));
  }
}

inline LdCase to_case(int c) {
  if (c < 1 || c > 3) throw CliFailure("case", "case must be 1, 2 or 3");
  return static_cast<LdCase>(c);
}

// ---------------------------------------------------------------- commands

inline std::vector<Failure> cmd_rate_curve(const Options& o, const Config& cfg, ArtifactSet& out) {
  const LdCase ld_case = to_case(o.ld_case);
  RateKind kind;
  if (o.quantity == "recurrence") kind = RateKind::recurrence;
  else if (o.quantity == "crossover") kind = RateKind::crossover;
  else if (o.quantity == "conditioned") kind = RateKind::conditioned;
  else throw CliFailure("quantity", "expected recurrence, crossover or conditioned");

  const ModelParams& base = cfg.params;
  const double l1 = base.lambda1();
  Grid g;
  if (o.sweep == "y") g = {o.sweep_from.value_or(0.01), o.sweep_to.value_or(1.99), o.sweep_step};
  else if (o.sweep == "r1") g = {o.sweep_from.value_or(l1 + 0.01), o.sweep_to.value_or(1.99), o.sweep_step};
  else if (o.sweep == "mu") g = {o.sweep_from.value_or(0.01), o.sweep_to.value_or(1.0), o.sweep_step};
  else throw CliFailure("sweep", "expected y, r1 or mu");
  check_grid(g, "sweep");
  const auto values = g.values();

  // Every bound is checked before any evaluation.
  std::vector<Failure> bad;
  for (double v : values) {
    if (o.sweep == "y" && !(v >= 0.0)) bad.push_back({"sweep", "y must be nonnegative"});
    if (o.sweep == "y" && kind == RateKind::conditioned && !(o.clone_factor <= std::exp(l1 * v) * (1 + 1e-12)))
      bad.push_back({"sweep", "clone factor exceeds e^{lambda1 y} at y=" + io::format_number(v)});
    if (o.sweep == "r1" && !(v >= l1 && v > 0.0))
      bad.push_back({"sweep", "r1 must be at least lambda1 (d1 >= 0) at r1=" + io::format_number(v)});
    if (o.sweep == "mu" && !(v > 0.0)) bad.push_back({"sweep", "mu must be positive"});
    if (!bad.empty()) break;
  }
  if (kind == RateKind::conditioned && !(o.clone_factor > 0.0)) bad.push_back({"clone-factor", "must be positive"});
  if (o.sweep != "y" && kind == RateKind::conditioned &&
      !(o.clone_factor <= std::exp(l1 * cfg.scenario.y) * (1 + 1e-12)))
    bad.push_back({"clone-factor", "exceeds e^{lambda1 y}"});
  if (!bad.empty()) throw CliFailure(bad);

  std::ostringstream csv;
  csv << "sweep_value,rate,theta_star\n";
  for (double v : values) {
    ModelParams p = base;
    double y = cfg.scenario.y;
    if (o.sweep == "y") y = v;
    else if (o.sweep == "r1") {
      p.resistant.r1 = v;
      p.resistant.d1 = v - l1;
    } else {
      p.mutation.mu = v;
    }
    RateResult r;
    if (kind == RateKind::recurrence) r = recurrence_rate(ld_case, y, p);
    else if (kind == RateKind::crossover) r = crossover_rate(ld_case, y, p);
    else r = conditioned_rate(y, o.clone_factor, p);
    csv << io::format_number(v) << ',' << io::format_number(r.value) << ',' << io::format_number(r.theta_star) << '\n';
  }
  out.add("rate_curve.csv", csv.str());
  return {};
}

inline std::vector<Failure> cmd_ratio_curve(const Options& o, const Config& cfg, ArtifactSet& out) {
  Grid g = o.betas;
  if (!o.betas_to_set) g.to = cfg.params.mutation.alpha;
  check_grid(g, "beta");
  const auto betas = g.values();
  for (double b : betas)
    if (!(b > 0.0 && b <= cfg.params.mutation.alpha + 1e-12))
      throw CliFailure("beta", "beta must lie in (0, alpha], got " + io::format_number(b));
  std::vector<double> clipped;
  for (double b : betas) clipped.push_back(std::min(b, cfg.params.mutation.alpha));
  const auto rows = decay_ratio_curve(cfg.scenario.y, clipped, static_cast<double>(cfg.scenario.n), cfg.params);
  std::ostringstream csv;
  csv << "beta,ratio\n";
  for (const auto& r : rows) csv << io::format_number(r.beta) << ',' << io::format_number(r.ratio) << '\n';
  out.add("ratio_curve.csv", csv.str());
  return {};
}

inline std::vector<Failure> cmd_clone_optimum(const Options& o, const Config& cfg, ArtifactSet& out) {
  check_grid(o.clone_ys, "y");
  const auto ys = o.clone_ys.values();
  for (double y : ys)
    if (!(y > 0.0)) throw CliFailure("y", "y values must be positive");
  std::ostringstream csv;
  csv << "y,a_star_star,theta1,theta2\n";
  for (double y : ys) {
    ClonesOptimum opt;
    try {
      opt = optimal_clone_factor(y, cfg.params);
    } catch (const std::exception& e) {
      throw CliFailure("y", "at y=" + io::format_number(y) + ": " + e.what());
    }
    csv << io::format_number(y) << ',' << io::format_number(opt.a_star_star) << ',' << io::format_number(opt.theta1)
        << ',' << io::format_number(opt.theta2) << '\n';
  }
  out.add("clone_optimum.csv", csv.str());
  return {};
}

inline std::string raw_rows_csv(const std::vector<ReplicateRow>& rows) {
  std::ostringstream csv;
  csv << "replicate,gamma,tau,censored_gamma,censored_tau,S,E\n";
  auto count = [](std::int64_t v) { return v < 0 ? std::string() : std::to_string(v); };
  for (const auto& r : rows)
    csv << r.replicate << ',' << io::format_number(r.gamma) << ',' << io::format_number(r.tau) << ','
        << (r.censored_gamma ? 1 : 0) << ',' << (r.censored_tau ? 1 : 0) << ',' << count(r.S) << ',' << count(r.E)
        << '\n';
  return csv.str();
}

// One raw file per grid cell, named after the cell.
inline void add_raw(ArtifactSet& out, const std::string& stem, const std::vector<ReplicateRow>& rows) {
  std::map<std::string, std::vector<ReplicateRow>> groups;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (!groups.count(r.group)) order.push_back(r.group);
    groups[r.group].push_back(r);
  }
  for (const auto& g : order) {
    std::string name = g;
    for (char& c : name)
      if (c == '=') c = '_';
    out.add(stem + "_raw_" + name + ".csv", raw_rows_csv(groups[g]));
  }
}

inline std::vector<Failure> cmd_simulate(const Options& o, const Config& cfg, ArtifactSet& out) {
  if (o.sim_replicates == 0) throw CliFailure("replicates", "must be positive");
  PathOptions opt;
  opt.ledger = true;
  std::vector<ReplicateRow> rows;
  if (o.event_log) {
    std::ostringstream log;
    EventLogWriter writer(log);
    PathOptions logged = opt;
    logged.on_event = [&](const EventRecord& e) { writer(e); };
    PhiloxStream rng(cfg.seed, stream_id(0, 0));
    simulate_path(cfg.params, cfg.scenario, rng, logged);
    out.add("events.csv", log.str());
  }
  rows = run_replicates<ReplicateRow>(o.sim_replicates, o.threads, [&](std::uint64_t i) {
    PhiloxStream rng(cfg.seed, stream_id(0, i));
    const auto path = simulate_path(cfg.params, cfg.scenario, rng, opt);
    const auto counts = path.ledger->counts();
    return ReplicateRow{i,
                        "",
                        path.passage.gamma,
                        path.passage.tau,
                        path.passage.gamma_censored,
                        path.passage.tau_censored,
                        static_cast<std::int64_t>(counts.surviving),
                        static_cast<std::int64_t>(counts.extinct)};
  });
  out.add("passages.csv", raw_rows_csv(rows));
  return {};
}

inline std::vector<Failure> report_failures(const ExperimentReport& rep) {
  std::vector<Failure> f;
  if (rep.verdict != Verdict::fail) return f;
  for (const auto& c : rep.cells)
    if (!c.pass) f.push_back({c.group + " " + c.label, "outside tolerance"});
  for (const auto& n : rep.notes) f.push_back({rep.tag, n});
  if (f.empty()) f.push_back({rep.tag, "experiment failed"});
  return f;
}

inline std::vector<Failure> cmd_experiment(const Options& o, const Config& cfg, ArtifactSet& out, std::ostream& log) {
  RunOptions run{cfg.seed, o.threads, o.raw};
  const auto& p = cfg.params;
  const auto& s = cfg.scenario;
  if (o.replicates == 0) throw CliFailure("replicates", "must be positive");
  const auto grid = o.n_grid.empty() ? std::vector<std::uint64_t>{s.n} : parse_n_list(o.n_grid);

  ExperimentReport rep;
  std::vector<ReplicateRow> raw;
  try {
    if (o.experiment == "moments") {
      rep = moment_validation(p, s.n, parse_double_list(o.checkpoints, "checkpoints"), o.replicates, run).report;
    } else if (o.experiment == "convergence") {
      auto r = convergence_experiment(p, s.a, grid, o.replicates, run, s.horizon_multiplier);
      rep = std::move(r.report);
      raw = std::move(r.raw);
    } else if (o.experiment == "tail") {
      auto r = tail_probability_experiment(p, s.a, s.y, grid, o.replicates, run);
      rep = std::move(r.report);
      raw = std::move(r.raw);
    } else if (o.experiment == "conditioned-clones") {
      auto r = conditioned_clone_experiment(p, s.a, s.y, s.n, o.replicates, run);
      rep = std::move(r.report);
      raw = std::move(r.raw);
    } else {
      throw CliFailure("name", "expected moments, convergence, tail or conditioned-clones");
    }
  } catch (const std::invalid_argument& e) {
    throw CliFailure(o.experiment, e.what());
  } catch (const numeric::BracketError& e) {
    throw CliFailure(o.experiment, e.what());
  }

  const std::string stem = rep.tag;
  out.add(stem + "_report.json", to_json(rep).dump(2) + "\n");
  std::ostringstream table;
  write_table(table, rep);
  out.add(stem + "_report.txt", table.str());
  if (o.raw) add_raw(out, stem, raw);
  log << "experiment " << rep.tag << " finished in " << std::fixed << std::setprecision(1) << rep.wall_seconds
            << " s\n";
  return report_failures(rep);
}

inline std::vector<Failure> cmd_validate(const Options&, const Config& cfg, ArtifactSet& out) {
  const auto rep = run_invariant_suite(cfg);
  out.add("validate_report.json", to_json(rep).dump(2) + "\n");
  std::vector<Failure> f;
  for (const auto& c : rep.checks)
    if (!c.pass) f.push_back({c.name, c.detail});
  return f;
}

inline void print_failures(std::ostream& err, const std::vector<Failure>& failures) {
  nlohmann::ordered_json j;
  j["status"] = "failed";
  auto arr = nlohmann::ordered_json::array();
  for (const auto& f : failures) arr.push_back({{"key", f.key}, {"message", f.message}});
  j["failures"] = std::move(arr);
  err << j.dump() << '\n';
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Rate functions, clone optima and Monte Carlo experiments for early treatment failure"};
  app.require_subcommand(1);
  Options o;
  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key=value configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "random seed (overrides the config)");
  app.add_option("--out", o.out_dir, "output directory");
  app.add_option("--threads", o.threads, "worker threads, 0 = all cores");
  std::map<std::string, std::string> key_values;
  for (const auto& key : config_keys()) {
    if (key == "seed") continue;
    app.add_option("--" + key, key_values[key], "override config key " + key);
  }

  auto* rate = app.add_subcommand("rate-curve", "rate function over a sweep (CSV sweep_value,rate,theta_star)");
  rate->add_option("--case", o.ld_case, "1, 2 or 3")->check(CLI::Range(1, 3));
  rate->add_option("--quantity", o.quantity, "recurrence, crossover or conditioned");
  rate->add_option("--sweep", o.sweep, "y, r1 or mu");
  double sweep_from = 0.0, sweep_to = 0.0;
  auto* from_opt = rate->add_option("--from", sweep_from, "first sweep value");
  auto* to_opt = rate->add_option("--to", sweep_to, "last sweep value");
  rate->add_option("--step", o.sweep_step, "sweep step");
  rate->add_option("--clone-factor", o.clone_factor, "clone factor for the conditioned rate");

  auto* ratio = app.add_subcommand("ratio-curve", "n^(beta-alpha) L1/L3 over beta (CSV beta,ratio)");
  ratio->add_option("--beta-from", o.betas.from);
  auto* beta_to = ratio->add_option("--beta-to", o.betas.to);
  ratio->add_option("--beta-step", o.betas.step);

  auto* clone = app.add_subcommand("clone-optimum", "a**, theta1, theta2 over y (CSV y,a_star_star,theta1,theta2)");
  clone->add_option("--y-from", o.clone_ys.from);
  clone->add_option("--y-to", o.clone_ys.to);
  clone->add_option("--y-step", o.clone_ys.step);

  auto* sim = app.add_subcommand("simulate", "simulate paths (CSV of passage times and clone counts)");
  sim->add_option("--replicates", o.sim_replicates, "number of paths");
  sim->add_flag("--event-log", o.event_log, "also write the event log of the first path");

  auto* exp = app.add_subcommand("experiment", "run a Monte Carlo campaign");
  exp->add_option("--name", o.experiment, "moments, convergence, tail or conditioned-clones")->required();
  exp->add_option("--replicates", o.replicates, "replicates per grid cell");
  exp->add_option("--n-grid", o.n_grid, "comma-separated population sizes");
  exp->add_option("--checkpoints", o.checkpoints, "comma-separated times (moments)");
  exp->add_flag("--raw", o.raw, "write per-replicate CSV");

  auto* val = app.add_subcommand("validate", "run the invariant suite");

  for (auto* sub : {rate, ratio, clone, sim, exp, val}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_failures(err, {{"arguments", e.what()}});
    return 1;
  }

  if (!config_path.empty()) o.config_path = config_path;
  if (*seed_opt) o.seed = seed;
  for (const auto& key : config_keys()) {
    if (key == "seed") continue;
    if (app.count("--" + key) > 0) o.overrides[key] = key_values[key];
  }
  if (*from_opt) o.sweep_from = sweep_from;
  if (*to_opt) o.sweep_to = sweep_to;
  o.betas_to_set = beta_to->count() > 0;

  std::string command;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--out" || std::string(argv[i]) == "--threads") {
      ++i;  // neither affects results
      continue;
    }
    if (!command.empty()) command += ' ';
    command += argv[i];
  }

  try {
    const Config cfg = resolve_config(o);
    ArtifactSet artifacts(o.out_dir);
    artifacts.add("config.txt", render_config(cfg));
    std::vector<Failure> failures;
    if (*rate) failures = cmd_rate_curve(o, cfg, artifacts);
    else if (*ratio) failures = cmd_ratio_curve(o, cfg, artifacts);
    else if (*clone) failures = cmd_clone_optimum(o, cfg, artifacts);
    else if (*sim) failures = cmd_simulate(o, cfg, artifacts);
    else if (*exp) failures = cmd_experiment(o, cfg, artifacts, out);
    else failures = cmd_validate(o, cfg, artifacts);
    artifacts.write(command, failures);
    if (!failures.empty()) {
      print_failures(err, failures);
      return 1;
    }
    out << "wrote " << (fs::path(o.out_dir) / "manifest.json").string() << '\n';
    return 0;
  } catch (const CliFailure& e) {
    print_failures(err, e.failures());
    return 1;
  } catch (const std::exception& e) {
    print_failures(err, {{"error", e.what()}});
    return 1;
  }
}

}  // namespace ldbranch::cli
