#pragma once

// Single-record inference through an artifact's embedded preprocessor, with
// masked-prediction deltas for what-if display.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "clinpred/explain.hpp"
#include "clinpred/model.hpp"

namespace clinpred {

// monostate = missing.
using RawValue = std::variant<std::monostate, double, std::string>;
using RawRecord = std::map<std::string, RawValue>;

struct Attribution {
  std::string feature;
  double delta = 0;  // score minus score with the feature masked, normalized
};

struct ScoreResult {
  double probability = 0;
  std::optional<double> operating_threshold;
  std::vector<Attribution> attributions;  // by descending |delta|
  bool degenerate = false;  // no observed values, or no feature moves the score
};

// One-row table in the artifact's input schema. Keys are validated against
// the fitted input columns; absent keys are missing values.
inline CohortTable record_table(const PreprocessorState& st, const RawRecord& record) {
  std::map<std::string, ColumnKind> kinds(st.input_columns.begin(), st.input_columns.end());
  for (const auto& [key, value] : record)
    if (!kinds.count(key)) throw ValidationError(key, "unknown feature '" + key + "'");

  CohortTable t;
  t.y_sars_cov_2 = {0};
  t.y_admission = {0};
  t.y_icu = {0};
  t.age_quantile = {0};
  for (const auto& [name, kind] : st.input_columns) {
    RawColumn c{name, kind, {}, {}};
    auto it = record.find(name);
    const RawValue v = it == record.end() ? RawValue{} : it->second;
    if (kind == ColumnKind::numeric) {
      std::optional<double> x;
      if (auto d = std::get_if<double>(&v)) x = *d;
      else if (auto s = std::get_if<std::string>(&v)) {
        x = detail::parse_number(*s);
        if (!x) throw ValidationError(name, "feature '" + name + "' expects a number");
      }
      if (x && !std::isfinite(*x)) throw ValidationError(name, "feature '" + name + "' is not finite");
      c.numbers.push_back(x);
    } else {
      std::optional<std::string> x;
      if (auto s = std::get_if<std::string>(&v)) x = *s;
      else if (std::holds_alternative<double>(v))
        throw ValidationError(name, "feature '" + name + "' expects a category string");
      c.texts.push_back(x);
    }
    t.columns.push_back(std::move(c));
  }
  return t;
}

inline ScoreResult score_record(const ModelArtifact& a, const RawRecord& record, std::size_t top_k = 10) {
  const PreprocessorState& st = a.preprocessor;
  const FeatureMatrix x = apply_preprocessor(st, record_table(st, record));
  ScoreResult r;
  const std::vector<double> base = predict(a, x);
  r.probability = base[0];
  r.operating_threshold = a.operating_threshold;

  std::vector<ImportanceEntry> deltas;
  for (Eigen::Index j = 0; j < x.values.cols(); ++j) {
    double d = r.probability - masked_scores(a, x.values, j, base)[0];
    deltas.push_back({x.names[static_cast<std::size_t>(j)], d});
  }
  auto grouped = group_entries(deltas, st);
  std::stable_sort(grouped.begin(), grouped.end(), [](const ImportanceEntry& p, const ImportanceEntry& q) {
    return std::abs(p.importance) > std::abs(q.importance);
  });
  if (top_k > 0 && grouped.size() > top_k) grouped.resize(top_k);
  double total = 0;
  for (const auto& g : grouped) total += std::abs(g.importance);

  bool any_observed = false;
  for (const auto& [key, value] : record) any_observed |= !std::holds_alternative<std::monostate>(value);
  r.degenerate = !any_observed || !(total > 0);
  for (const auto& g : grouped) r.attributions.push_back({g.name, total > 0 ? g.importance / total : 0.0});
  return r;
}

}  // namespace clinpred
