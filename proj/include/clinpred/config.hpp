#pragma once

// Pipeline configuration: key = value file, CLINPRED_* environment
// overrides, command-line flags. Precedence: flag > env > file > default.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "json.hpp"

namespace clinpred {

struct PipelineConfig {
  std::string cohort = "data/dataset.csv";
  std::string schema;  // empty: built-in column names
  std::uint64_t seed = 2020;
  std::size_t n_runs = 30;
  int n_chained_iterations = 10;
  std::size_t n_bootstrap = 100;
  double alpha = 0.05;
  std::string out = "out";
  std::size_t workers = 1;
  std::vector<Task> tasks = {std::begin(kAllTasks), std::end(kAllTasks)};
  std::vector<Family> families = {std::begin(kAllFamilies), std::end(kAllFamilies)};
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {"cohort", "schema",  "seed",    "n_runs", "n_chained_iterations",
                                                "bootstrap", "alpha", "out", "workers", "task", "family"};
  return keys;
}

inline std::string env_name(const std::string& key) {
  std::string s = "CLINPRED_";
  for (char c : key) s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return s;
}

namespace detail {

inline long parse_positive(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || x <= 0) throw ConfigError("config '" + key + "' must be a positive integer, got '" + v + "'");
  return x;
}

}  // namespace detail

inline void apply_config_value(PipelineConfig& c, const std::string& key, const std::string& v) {
  if (key == "cohort") c.cohort = v;
  else if (key == "schema") c.schema = v;
  else if (key == "seed") {
    std::size_t used = 0;
    try {
      c.seed = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty() || v[0] == '-') throw ConfigError("config 'seed' must be a non-negative integer");
  } else if (key == "n_runs") c.n_runs = static_cast<std::size_t>(detail::parse_positive(key, v));
  else if (key == "n_chained_iterations") c.n_chained_iterations = static_cast<int>(detail::parse_positive(key, v));
  else if (key == "bootstrap") c.n_bootstrap = static_cast<std::size_t>(detail::parse_positive(key, v));
  else if (key == "workers") c.workers = static_cast<std::size_t>(detail::parse_positive(key, v));
  else if (key == "alpha") {
    char* end = nullptr;
    double a = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || !(a > 0 && a < 1)) throw ConfigError("config 'alpha' must lie in (0, 1)");
    c.alpha = a;
  } else if (key == "out") c.out = v;
  else if (key == "task") {
    c.tasks.clear();
    if (v == "all") c.tasks.assign(std::begin(kAllTasks), std::end(kAllTasks));
    else
      for (const auto& t : split_list(v, ',')) c.tasks.push_back(parse_task(t));
    if (c.tasks.empty()) throw ConfigError("config 'task' is empty");
  } else if (key == "family") {
    c.families.clear();
    if (v == "all") c.families.assign(std::begin(kAllFamilies), std::end(kAllFamilies));
    else
      for (const auto& f : split_list(v, ',')) c.families.push_back(parse_family(f));
    if (c.families.empty()) throw ConfigError("config 'family' is empty");
  } else
    throw ConfigError("unknown config key '" + key + "'");
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

// `flags` holds only the flags actually given on the command line.
inline PipelineConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags,
                                     const EnvLookup& env = process_env) {
  std::map<std::string, std::string> merged;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    merged = parse_key_values(ss.str());
  }
  for (const auto& key : config_keys())
    if (auto v = env(env_name(key))) merged[key] = *v;
  for (const auto& [k, v] : flags) merged[k] = v;
  PipelineConfig c;
  for (const auto& [k, v] : merged) apply_config_value(c, k, v);
  return c;
}

inline std::string tasks_string(const PipelineConfig& c) {
  std::string s;
  for (auto t : c.tasks) s += (s.empty() ? "" : ",") + to_string(t);
  return s;
}

inline std::string families_string(const PipelineConfig& c) {
  std::string s;
  for (auto f : c.families) s += (s.empty() ? "" : ",") + to_string(f);
  return s;
}

// Result-determining settings only; paths and the worker count are left out.
inline nlohmann::json config_snapshot(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"n_runs", c.n_runs},
          {"n_chained_iterations", c.n_chained_iterations},
          {"bootstrap", c.n_bootstrap},
          {"alpha", c.alpha},
          {"task", tasks_string(c)},
          {"family", families_string(c)}};
}

}  // namespace clinpred
