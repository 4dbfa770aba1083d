#pragma once

// Per-task comparison tables: one row per family, each metric as
// "0.66 (0.63, 0.70)", prefixed with a dagger when the paired t-test
// against the task's best-AUC family is significant.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "clinpred/metrics.hpp"

namespace clinpred {

inline constexpr const char* kDagger = "\xE2\x80\xA0";  // U+2020

struct ReportCell {
  double point = 0, low = 0, high = 0;
  bool dagger = false;
};

inline std::string format_cell(const ReportCell& c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s%.2f (%.2f, %.2f)", c.dagger ? kDagger : "", c.point, c.low, c.high);
  return buf;
}

inline std::optional<ReportCell> parse_cell(const std::string& s) {
  static const std::regex re("^(\xE2\x80\xA0)?(-?[0-9]+\\.[0-9]+) \\((-?[0-9]+\\.[0-9]+), (-?[0-9]+\\.[0-9]+)\\)$");
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  return ReportCell{std::stod(m[2]), std::stod(m[3]), std::stod(m[4]), m[1].matched};
}

inline const std::vector<std::string>& report_metric_headers() {
  static const std::vector<std::string> h = {"AUC", "AUPR", "Sensitivity", "Specificity", "Spec.@95% Sens."};
  return h;
}

// Rows by descending test AUC (family order breaks ties).
inline std::string format_task_table(const std::vector<std::pair<Family, EvalReport>>& rows) {
  std::string out = "Model";
  for (const auto& h : report_metric_headers()) out += "\t" + h;
  out += "\n";
  auto order = rows;
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.second.get(Metric::auc).point > b.second.get(Metric::auc).point;
  });
  for (const auto& [family, r] : order) {
    out += display_name(family);
    for (auto m : kAllMetrics) {
      const auto& e = r.get(m);
      out += "\t" + format_cell({e.point, e.ci.low, e.ci.high, r.significance[static_cast<int>(m)].significant});
    }
    out += "\n";
  }
  return out;
}

struct ParsedRow {
  std::string model;
  std::vector<ReportCell> cells;
};

inline std::vector<ParsedRow> parse_task_table(const std::string& text) {
  std::vector<ParsedRow> rows;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) throw IngestionError("report table has no header");
  ++pos;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    ParsedRow row;
    std::size_t p = 0;
    for (int k = 0;; ++k) {
      std::size_t tab = line.find('\t', p);
      std::string field = line.substr(p, tab == std::string::npos ? std::string::npos : tab - p);
      if (k == 0) row.model = field;
      else {
        auto c = parse_cell(field);
        if (!c) throw IngestionError("malformed report cell '" + field + "'");
        row.cells.push_back(*c);
      }
      if (tab == std::string::npos) break;
      p = tab + 1;
    }
    if (row.cells.size() != kAllMetrics.size()) throw IngestionError("report row has wrong column count");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_roc_table(const std::vector<RocPoint>& roc) {
  std::string out = "fpr\ttpr\tthreshold\n";
  char buf[128];
  for (const auto& p : roc) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g\n", p.fpr, p.tpr, p.threshold);
    out += buf;
  }
  return out;
}

inline std::string format_pr_table(const std::vector<PrPoint>& pr) {
  std::string out = "recall\tprecision\tthreshold\n";
  char buf[128];
  for (const auto& p : pr) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g\n", p.recall, p.precision, p.threshold);
    out += buf;
  }
  return out;
}

}  // namespace clinpred
