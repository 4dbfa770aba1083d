#pragma once

// Search space for the five model families. Discrete parameters are drawn
// uniformly from their choice lists; continuous ones uniformly from their
// open interval.

#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "clinpred/common.hpp"
#include "json.hpp"

namespace clinpred {

using ParamValue = std::variant<long, double, std::string>;

struct ParamSpec {
  std::string name;
  std::vector<ParamValue> choices;  // discrete when non-empty
  double low = 0, high = 0;         // continuous otherwise
  bool is_discrete() const { return !choices.empty(); }
};

inline const std::vector<ParamSpec>& search_space(Family f) {
  using S = std::string;
  static const std::vector<ParamSpec> lr = {
      {"C", {0.01, 0.1, 1.0, 10.0}},
  };
  static const std::vector<ParamSpec> nn = {
      {"hidden_units", {16L, 32L, 64L, 128L}},
      {"layers", {1L, 2L, 3L}},
      {"activation", {S("relu"), S("selu"), S("elu")}},
      {"batch_size", {16L, 32L, 64L, 128L}},
      {"l2", {0.0, 0.00001, 0.0001}},
      {"learning_rate", {0.003, 0.03}},
      {"dropout", {}, 0.0, 0.25},
  };
  static const std::vector<ParamSpec> rf = {
      {"depth", {3L, 4L, 5L}},
      {"trees", {32L, 64L, 128L, 256L}},
  };
  static const std::vector<ParamSpec> svm = {
      {"C", {0.01, 0.1, 1.0, 10.0}},
      {"kernel", {S("polynomial"), S("rbf"), S("sigmoid")}},
      {"degree", {3L, 5L, 7L}},
  };
  static const std::vector<ParamSpec> xgb = {
      {"subsample", {0.25, 0.5, 0.75, 1.0}},
      {"max_depth", {2L, 3L, 4L, 5L, 6L, 7L, 8L}},
      {"gamma", {0.0, 0.1, 1.0, 10.0}},
      {"learning_rate", {0.003, 0.03, 0.3, 0.5}},
      {"l1", {1.0, 0.1, 0.001, 0.0}},
      {"l2", {1.0, 0.1, 0.001, 0.0}},
      {"rounds", {5L, 10L, 15L, 20L}},
  };
  switch (f) {
    case Family::lr: return lr;
    case Family::nn: return nn;
    case Family::rf: return rf;
    case Family::svm: return svm;
    case Family::xgb: return xgb;
  }
  return lr;
}

struct Hyperparams {
  Family family = Family::lr;
  std::map<std::string, ParamValue> values;

  double real(const std::string& name) const {
    const auto& v = values.at(name);
    if (auto* d = std::get_if<double>(&v)) return *d;
    if (auto* l = std::get_if<long>(&v)) return static_cast<double>(*l);
    throw ConfigError("hyperparameter '" + name + "' is not numeric");
  }
  long integer(const std::string& name) const { return std::get<long>(values.at(name)); }
  const std::string& text(const std::string& name) const {
    return std::get<std::string>(values.at(name));
  }

  bool operator==(const Hyperparams&) const = default;
};

// Throws ConfigError unless every parameter of the family is present, of
// the right type, and inside its choice set or interval.
inline void validate(const Hyperparams& hp) {
  const auto& space = search_space(hp.family);
  if (hp.values.size() != space.size())
    throw ConfigError(to_string(hp.family) + ": expected " + std::to_string(space.size()) +
                      " hyperparameters, got " + std::to_string(hp.values.size()));
  for (const auto& spec : space) {
    auto it = hp.values.find(spec.name);
    if (it == hp.values.end())
      throw ConfigError(to_string(hp.family) + ": missing hyperparameter '" + spec.name + "'");
    if (spec.is_discrete()) {
      bool found = false;
      for (const auto& c : spec.choices) found |= (c == it->second);
      if (!found)
        throw ConfigError(to_string(hp.family) + ": '" + spec.name + "' outside its choice set");
    } else {
      auto* d = std::get_if<double>(&it->second);
      if (!d || !(*d >= spec.low && *d <= spec.high))
        throw ConfigError(to_string(hp.family) + ": '" + spec.name + "' outside its range");
    }
  }
}

inline Hyperparams sample_hyperparams(Family family, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Hyperparams hp{family, {}};
  for (const auto& spec : search_space(family)) {
    if (spec.is_discrete()) {
      std::uniform_int_distribution<std::size_t> pick(0, spec.choices.size() - 1);
      hp.values[spec.name] = spec.choices[pick(rng)];
    } else {
      std::uniform_real_distribution<double> u(spec.low, spec.high);
      hp.values[spec.name] = u(rng);
    }
  }
  return hp;
}

inline nlohmann::json to_json(const Hyperparams& hp) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : hp.values)
    std::visit([&](const auto& x) { j[k] = x; }, v);
  return j;
}

inline Hyperparams hyperparams_from_json(Family family, const nlohmann::json& j) {
  Hyperparams hp{family, {}};
  for (const auto& spec : search_space(family)) {
    if (!j.contains(spec.name)) continue;
    const auto& v = j.at(spec.name);
    if (v.is_string()) hp.values[spec.name] = v.get<std::string>();
    else if (v.is_number_integer()) hp.values[spec.name] = v.get<long>();
    else hp.values[spec.name] = v.get<double>();
  }
  validate(hp);
  return hp;
}

// Compact one-line form for ledgers, e.g. "C=0.1;kernel=rbf".
inline std::string describe(const Hyperparams& hp) {
  std::string s;
  for (const auto& [k, v] : hp.values) {
    if (!s.empty()) s += ';';
    s += k + "=";
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, std::string>) s += x;
          else s += nlohmann::json(x).dump();
        },
        v);
  }
  return s;
}

}  // namespace clinpred
