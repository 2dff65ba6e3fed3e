#pragma once

// Flat key=value configuration. Values are layered: file, then LDBRANCH_<KEY>
// environment variables, then explicit overrides (command-line flags).

#include "ldbranch/params.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace ldbranch {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {"r0", "d0", "r1", "d1", "mu", "alpha", "regime",
                                                "beta", "n", "a", "y", "horizon_multiplier", "seed"};
  return keys;
}

struct ConfigIssue {
  std::string key;  // empty for file-level problems
  std::string message;
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues)
      : std::invalid_argument(format(issues)), issues_(std::move(issues)) {}

  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string format(const std::vector<ConfigIssue>& issues) {
    std::string s = "configuration error:";
    for (const auto& i : issues) s += "\n  " + (i.key.empty() ? std::string() : i.key + ": ") + i.message;
    return s;
  }
  std::vector<ConfigIssue> issues_;
};

struct Config {
  ModelParams params;
  ScenarioConfig scenario;
  std::uint64_t seed = 1;
};

using ConfigValues = std::map<std::string, std::string>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool known_key(const std::string& key) {
  const auto& keys = config_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Parses "key = value" lines; '#' starts a comment. Unknown keys, malformed
// lines and repeated keys are all reported together.
inline ConfigValues parse_config_text(const std::string& text, const std::string& source = "config") {
  ConfigValues out;
  std::vector<ConfigIssue> issues;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = detail::trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string_view::npos) {
      issues.push_back({"", where + ": expected key = value"});
      continue;
    }
    const std::string key(detail::trim(view.substr(0, eq)));
    const std::string value(detail::trim(view.substr(eq + 1)));
    if (!detail::known_key(key)) {
      issues.push_back({key, where + ": unknown key '" + key + "'"});
      continue;
    }
    if (!out.emplace(key, value).second) issues.push_back({key, where + ": repeated key"});
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return out;
}

inline ConfigValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({{"", "cannot read config file '" + path + "'"}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

// LDBRANCH_<KEY> overrides for every documented key.
inline ConfigValues env_overrides(const EnvLookup& lookup = process_env) {
  ConfigValues out;
  for (const auto& key : config_keys()) {
    std::string name = "LDBRANCH_";
    for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (auto v = lookup(name)) out[key] = *v;
  }
  return out;
}

// Builds a configuration from layered values, later layers winning.
inline Config build_config(const std::vector<ConfigValues>& layers) {
  ConfigValues merged;
  for (const auto& layer : layers)
    for (const auto& [k, v] : layer) merged[k] = v;

  Config cfg;
  std::vector<ConfigIssue> issues;
  auto number = [&](const std::string& key, double& slot) {
    const auto it = merged.find(key);
    if (it == merged.end()) return;
    if (auto v = detail::parse_double(it->second)) slot = *v;
    else issues.push_back({key, "not a number: '" + it->second + "'"});
  };
  auto integer = [&](const std::string& key, std::uint64_t& slot) {
    const auto it = merged.find(key);
    if (it == merged.end()) return;
    if (auto v = detail::parse_u64(it->second)) slot = *v;
    else issues.push_back({key, "not a nonnegative integer: '" + it->second + "'"});
  };
  for (const auto& [k, v] : merged)
    if (!detail::known_key(k)) issues.push_back({k, "unknown key '" + k + "'"});

  number("r0", cfg.params.sensitive.r0);
  number("d0", cfg.params.sensitive.d0);
  number("r1", cfg.params.resistant.r1);
  number("d1", cfg.params.resistant.d1);
  number("mu", cfg.params.mutation.mu);
  number("alpha", cfg.params.mutation.alpha);
  double beta = regime::PreExisting{}.beta;
  number("beta", beta);
  integer("n", cfg.scenario.n);
  number("a", cfg.scenario.a);
  number("y", cfg.scenario.y);
  number("horizon_multiplier", cfg.scenario.horizon_multiplier);
  integer("seed", cfg.seed);

  const std::string reg = merged.count("regime") ? merged["regime"] : "subthreshold";
  if (reg == "subthreshold") cfg.params.regime = regime::SubThreshold{};
  else if (reg == "critical") cfg.params.regime = regime::Critical{};
  else if (reg == "preexisting") cfg.params.regime = regime::PreExisting{beta};
  else issues.push_back({"regime", "expected subthreshold, critical or preexisting, got '" + reg + "'"});

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

// file < environment < overrides, then validated.
inline Config load_config(const std::optional<std::string>& path, const ConfigValues& overrides = {},
                          const EnvLookup& lookup = process_env) {
  std::vector<ConfigValues> layers;
  if (path) layers.push_back(read_config_file(*path));
  layers.push_back(env_overrides(lookup));
  layers.push_back(overrides);
  Config cfg = build_config(layers);
  validate(cfg.params, cfg.scenario);
  return cfg;
}

// Key=value rendering of a configuration, in documented key order.
inline std::string render_config(const Config& cfg) {
  std::ostringstream os;
  os.precision(17);
  const auto& p = cfg.params;
  os << "r0 = " << p.sensitive.r0 << "\nd0 = " << p.sensitive.d0 << "\nr1 = " << p.resistant.r1
     << "\nd1 = " << p.resistant.d1 << "\nmu = " << p.mutation.mu << "\nalpha = " << p.mutation.alpha
     << "\nregime = " << regime_name(p.regime) << '\n';
  if (const auto* pre = std::get_if<regime::PreExisting>(&p.regime)) os << "beta = " << pre->beta << '\n';
  os << "n = " << cfg.scenario.n << "\na = " << cfg.scenario.a << "\ny = " << cfg.scenario.y
     << "\nhorizon_multiplier = " << cfg.scenario.horizon_multiplier << "\nseed = " << cfg.seed << '\n';
  return os.str();
}

}  // namespace ldbranch
