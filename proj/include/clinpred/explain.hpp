#pragma once

// Feature importance as the normalized increase in test-fold cross-entropy
// when one feature column is masked to 0 (training mean for standardized
// columns, "absent" for indicators and one-hot columns).

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/model.hpp"

namespace clinpred {

inline constexpr std::size_t kImportanceDisplayCut = 10;

struct ImportanceEntry {
  std::string name;
  double importance = 0;
};

struct ImportanceReport {
  std::vector<ImportanceEntry> entries;  // layout order
  double loss_baseline = 0;
  bool degenerate = false;  // every contribution was 0; importances are uniform
  std::string model_ref;

  // Entries by descending importance; equal values keep layout order.
  std::vector<ImportanceEntry> ranked() const {
    std::vector<ImportanceEntry> out = entries;
    std::stable_sort(out.begin(), out.end(),
                     [](const ImportanceEntry& a, const ImportanceEntry& b) { return a.importance > b.importance; });
    return out;
  }
  double total() const {
    double s = 0;
    for (const auto& e : entries) s += e.importance;
    return s;
  }
};

// Scores with column `col` set to 0. Only rows whose value changes are
// rescored; row-wise prediction makes that identical to a full rescore.
inline std::vector<double> masked_scores(const ModelArtifact& a, const Matrix& x, Eigen::Index col,
                                         const std::vector<double>& base) {
  std::vector<double> out = base;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (x(i, col) != 0.0) rows.push_back(i);
  if (rows.empty()) return out;
  Matrix sub(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  sub.col(col).setZero();
  auto s = predict_features(a, sub);
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<std::size_t>(rows[r])] = s[r];
  return out;
}

inline ImportanceReport marginal_importance(const ModelArtifact& a, const FeatureMatrix& x,
                                            const std::vector<std::uint8_t>& y, std::size_t workers = 1) {
  if (x.rows() != y.size()) throw PipelineError("importance: feature rows and labels differ");
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos == 0 || pos == static_cast<long>(y.size()))
    throw UndefinedMetricError("importance undefined: labels contain a single class");
  const auto base = predict(a, x);  // also checks the layout
  const std::vector<double> yd = to_double_labels(y);

  ImportanceReport r;
  r.model_ref = to_string(a.family) + "/" + to_string(a.task);
  r.loss_baseline = binary_cross_entropy(base, yd);
  const std::size_t d = x.cols();
  std::vector<double> contrib(d);
  parallel_for(d, workers, [&](std::size_t i) {
    auto s = masked_scores(a, x.values, static_cast<Eigen::Index>(i), base);
    contrib[i] = std::max(binary_cross_entropy(s, yd) - r.loss_baseline, 0.0);
  });
  const double total = std::accumulate(contrib.begin(), contrib.end(), 0.0);
  r.degenerate = !(total > 0);
  for (std::size_t i = 0; i < d; ++i)
    r.entries.push_back({x.names[i], r.degenerate ? 1.0 / static_cast<double>(d) : contrib[i] / total});
  return r;
}

// Source-level entries: one-hot columns of a discrete column are summed;
// continuous columns and their missing indicators stay separate. Entries
// appear in first-seen layout order.
inline std::vector<ImportanceEntry> group_entries(const std::vector<ImportanceEntry>& entries,
                                                  const PreprocessorState& st) {
  const auto info = st.feature_info();
  if (info.size() != entries.size()) throw SchemaMismatchError("importance layout does not match preprocessor");
  std::vector<ImportanceEntry> out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != st.feature_layout[i])
      throw SchemaMismatchError("importance layout does not match preprocessor");
    std::string name;
    switch (info[i].role) {
      case FeatureRole::one_hot: name = info[i].source; break;
      case FeatureRole::continuous: name = info[i].source; break;
      case FeatureRole::missing_indicator: name = info[i].source + kMissingSuffix; break;
    }
    auto [it, fresh] = slot.emplace(name, out.size());
    if (fresh) out.push_back({name, 0.0});
    out[it->second].importance += entries[i].importance;
  }
  return out;
}

inline ImportanceReport grouped_importance(const ImportanceReport& report, const PreprocessorState& st) {
  ImportanceReport g = report;
  g.entries = group_entries(report.entries, st);
  return g;
}

// Ranked table: name, relative importance in percent, rank (1-based).
inline std::string format_importance_table(const ImportanceReport& r, std::size_t top = 0) {
  std::string out = "feature\timportance_pct\trank\n";
  auto ranked = r.ranked();
  if (top > 0 && ranked.size() > top) ranked.resize(top);
  char buf[64];
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.4f", 100.0 * ranked[k].importance);
    out += ranked[k].name + "\t" + buf + "\t" + std::to_string(k + 1) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const ImportanceReport& r) {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& x : r.entries) e.push_back({{"name", x.name}, {"importance", x.importance}});
  return {{"entries", e}, {"loss_baseline", r.loss_baseline}, {"degenerate", r.degenerate}, {"model", r.model_ref}};
}

inline ImportanceReport importance_from_json(const nlohmann::json& j) {
  ImportanceReport r;
  for (const auto& e : j.at("entries"))
    r.entries.push_back({e.at("name").get<std::string>(), e.at("importance").get<double>()});
  r.loss_baseline = j.at("loss_baseline").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.model_ref = j.at("model").get<std::string>();
  return r;
}

}  // namespace clinpred
