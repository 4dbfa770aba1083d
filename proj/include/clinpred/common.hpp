#pragma once

// Shared vocabulary for the pipeline: error types, task/family tags,
// seed derivation, content hashing and a small deterministic worker pool.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace clinpred {

// ------------------------------------------------------------
// errors
// ------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IngestionError : Error {
  using Error::Error;
};

struct SchemaMismatchError : Error {
  using Error::Error;
};

struct PipelineError : Error {
  using Error::Error;
};

struct UndefinedMetricError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  ValidationError(std::string key, const std::string& what)
      : Error(what), key(std::move(key)) {}
  std::string key;
};

struct TrainingDivergedError : Error {
  TrainingDivergedError(int step, const std::string& what)
      : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  int step;
};

// ------------------------------------------------------------
// tasks and model families
// ------------------------------------------------------------

enum class Task { sars_cov_2, admission, icu };
enum class Family { lr, nn, rf, svm, xgb };

inline constexpr Task kAllTasks[] = {Task::sars_cov_2, Task::admission, Task::icu};
inline constexpr Family kAllFamilies[] = {Family::lr, Family::nn, Family::rf,
                                          Family::svm, Family::xgb};

inline std::string to_string(Task t) {
  switch (t) {
    case Task::sars_cov_2: return "sars_cov_2";
    case Task::admission: return "admission";
    case Task::icu: return "icu";
  }
  return "?";
}

inline std::string to_string(Family f) {
  switch (f) {
    case Family::lr: return "lr";
    case Family::nn: return "nn";
    case Family::rf: return "rf";
    case Family::svm: return "svm";
    case Family::xgb: return "xgb";
  }
  return "?";
}

// Upper-case label used in report tables.
inline std::string display_name(Family f) {
  std::string s = to_string(f);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

inline Task parse_task(std::string_view s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline Family parse_family(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (Family f : kAllFamilies)
    if (to_string(f) == lower) return f;
  throw ConfigError("unknown model family '" + std::string(s) + "'");
}

// ------------------------------------------------------------
// hashing and seed derivation
// ------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seeds are keyed by stage name, not by call order, so adding or
// reordering stages does not perturb existing ones.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view stage) {
  return splitmix64(parent ^ fnv1a64(stage));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(parent ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// ------------------------------------------------------------
// parallel_for
// ------------------------------------------------------------

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index owns
// its output slot, so results do not depend on scheduling. The first
// exception (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  workers = std::clamp<std::size_t>(workers, 1, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ------------------------------------------------------------
// key = value config files
// ------------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// '#' starts a comment line; later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    ++line_no;
    pos = eol + 1;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    out[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

inline std::vector<std::string> split_list(std::string_view s, char sep = '|') {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    auto next = s.find(sep, pos);
    std::string item = trim(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos));
    if (!item.empty()) out.push_back(std::move(item));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

// Warnings collected by training and evaluation; surfaced in manifests.
struct Warnings {
  std::vector<std::string> items;
  void add(std::string w) { items.push_back(std::move(w)); }
  bool empty() const { return items.empty(); }
};

}  // namespace clinpred
