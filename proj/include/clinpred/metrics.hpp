#pragma once

// Ranking and threshold metrics, percentile bootstrap and paired t-tests.

#include <algorithm>
#include <array>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "json.hpp"

namespace clinpred {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
  std::size_t negatives() const { return size() - positives(); }

  void check() const {
    if (scores.size() != labels.size())
      throw UndefinedMetricError("scores and labels differ in length");
    for (double s : scores)
      if (!std::isfinite(s)) throw UndefinedMetricError("non-finite score");
    for (auto l : labels)
      if (l > 1) throw UndefinedMetricError("labels must be 0/1");
  }
  void require_both_classes() const {
    check();
    if (positives() == 0 || negatives() == 0)
      throw UndefinedMetricError("metric undefined: labels contain a single class");
  }
};

enum class Metric { auc, aupr, sensitivity, specificity, spec_at_95_sens };
inline constexpr std::array<Metric, 5> kAllMetrics = {
    Metric::auc, Metric::aupr, Metric::sensitivity, Metric::specificity, Metric::spec_at_95_sens};

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::auc: return "auc";
    case Metric::aupr: return "aupr";
    case Metric::sensitivity: return "sensitivity";
    case Metric::specificity: return "specificity";
    case Metric::spec_at_95_sens: return "spec_at_95_sens";
  }
  return "?";
}

struct RocPoint {
  double fpr, tpr, threshold;
};
struct PrPoint {
  double recall, precision, threshold;
};

namespace detail {

// One entry per distinct score, descending: cumulative TP/FP counts when
// everything scoring >= that value is called positive.
struct ThresholdSweep {
  std::vector<double> threshold;
  std::vector<std::size_t> tp, fp;
  std::size_t pos = 0, neg = 0;
};

inline ThresholdSweep sweep(const ScoredSet& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  ThresholdSweep w;
  w.pos = s.positives();
  w.neg = s.size() - w.pos;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (s.labels[order[k]] ? tp : fp)++;
    if (k + 1 == order.size() || s.scores[order[k + 1]] != s.scores[order[k]]) {
      w.threshold.push_back(s.scores[order[k]]);
      w.tp.push_back(tp);
      w.fp.push_back(fp);
    }
  }
  return w;
}

}  // namespace detail

// Mann-Whitney form: probability a random positive outscores a random
// negative, ties counted as one half.
inline double roc_auc(const ScoredSet& s) {
  s.require_both_classes();
  auto w = detail::sweep(s);
  double area2 = 0;  // twice the trapezoid area in count units
  std::size_t prev_tp = 0, prev_fp = 0;
  for (std::size_t k = 0; k < w.threshold.size(); ++k) {
    area2 += static_cast<double>(w.fp[k] - prev_fp) * static_cast<double>(w.tp[k] + prev_tp);
    prev_tp = w.tp[k];
    prev_fp = w.fp[k];
  }
  return area2 / (2.0 * static_cast<double>(w.pos) * static_cast<double>(w.neg));
}

inline std::vector<RocPoint> roc_curve(const ScoredSet& s) {
  s.require_both_classes();
  auto w = detail::sweep(s);
  std::vector<RocPoint> out;
  double top = w.threshold.empty() ? 0.0 : w.threshold.front();
  out.push_back({0.0, 0.0, std::nextafter(top, std::numeric_limits<double>::infinity())});
  for (std::size_t k = 0; k < w.threshold.size(); ++k)
    out.push_back({static_cast<double>(w.fp[k]) / static_cast<double>(w.neg),
                   static_cast<double>(w.tp[k]) / static_cast<double>(w.pos), w.threshold[k]});
  return out;
}

inline std::vector<PrPoint> pr_curve(const ScoredSet& s) {
  s.check();
  auto w = detail::sweep(s);
  std::vector<PrPoint> out;
  for (std::size_t k = 0; k < w.threshold.size(); ++k)
    out.push_back({w.pos ? static_cast<double>(w.tp[k]) / static_cast<double>(w.pos) : 0.0,
                   static_cast<double>(w.tp[k]) / static_cast<double>(w.tp[k] + w.fp[k]),
                   w.threshold[k]});
  return out;
}

// Step-wise area: sum over thresholds of (recall increment) * precision.
inline double aupr(const ScoredSet& s) {
  s.check();
  if (s.positives() == 0) throw UndefinedMetricError("AUPR undefined without positives");
  double area = 0, prev_recall = 0;
  for (const auto& p : pr_curve(s)) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

struct SensSpec {
  double sensitivity, specificity;
};

// Positive call iff score >= threshold.
inline SensSpec sens_spec_at(double threshold, const ScoredSet& s) {
  s.require_both_classes();
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool call = s.scores[i] >= threshold;
    if (s.labels[i]) tp += call;
    else tn += !call;
  }
  return {static_cast<double>(tp) / static_cast<double>(s.positives()),
          static_cast<double>(tn) / static_cast<double>(s.negatives())};
}

// ROC point closest to (FPR 0, TPR 1); ties prefer higher TPR, then the
// lower threshold.
inline RocPoint select_operating_point(const ScoredSet& validation) {
  auto roc = roc_curve(validation);
  RocPoint best = roc.front();
  double best_d = std::hypot(best.fpr, 1.0 - best.tpr);
  for (const auto& p : roc) {
    double d = std::hypot(p.fpr, 1.0 - p.tpr);
    bool better = d < best_d ||
                  (d == best_d && (p.tpr > best.tpr ||
                                   (p.tpr == best.tpr && p.threshold < best.threshold)));
    if (better) {
      best = p;
      best_d = d;
    }
  }
  return best;
}

inline double select_operating_threshold(const ScoredSet& validation) {
  return select_operating_point(validation).threshold;
}

// Best specificity among thresholds that keep sensitivity >= 95%.
inline double spec_at_95_sens(const ScoredSet& s) {
  s.require_both_classes();
  auto w = detail::sweep(s);
  double best = 0;
  for (std::size_t k = 0; k < w.threshold.size(); ++k) {
    if (100 * w.tp[k] < 95 * w.pos) continue;
    best = std::max(best, static_cast<double>(w.neg - w.fp[k]) / static_cast<double>(w.neg));
  }
  return best;
}

// Metric on s; threshold-based metrics use the given operating threshold.
inline double compute_metric(Metric m, const ScoredSet& s, double threshold) {
  switch (m) {
    case Metric::auc: return roc_auc(s);
    case Metric::aupr: return aupr(s);
    case Metric::sensitivity: return sens_spec_at(threshold, s).sensitivity;
    case Metric::specificity: return sens_spec_at(threshold, s).specificity;
    case Metric::spec_at_95_sens: return spec_at_95_sens(s);
  }
  return 0;
}

// ------------------------------------------------------------
// bootstrap
// ------------------------------------------------------------

// Linear interpolation between order statistics (q in [0, 1]).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw UndefinedMetricError("percentile of empty sample");
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

// Row indices of resample b. Resamples with a single class are redrawn;
// indices depend only on (seed, b, labels), so every model scored on the
// same labels sees identical resamples.
inline std::vector<std::size_t> bootstrap_indices(const std::vector<std::uint8_t>& labels,
                                                  std::uint64_t seed, std::size_t b,
                                                  int max_attempts = 1000) {
  const std::size_t n = labels.size();
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::size_t pos = 0;
    for (auto& i : idx) {
      i = pick(rng);
      pos += labels[i];
    }
    if (pos > 0 && pos < n) return idx;
  }
  throw UndefinedMetricError("degenerate bootstrap: no two-class resample after " +
                             std::to_string(max_attempts) + " attempts");
}

inline ScoredSet resample(const ScoredSet& s, const std::vector<std::size_t>& idx) {
  ScoredSet r;
  r.scores.reserve(idx.size());
  r.labels.reserve(idx.size());
  for (auto i : idx) {
    r.scores.push_back(s.scores[i]);
    r.labels.push_back(s.labels[i]);
  }
  return r;
}

struct Interval {
  double low = 0, high = 0;
};

struct BootstrapResult {
  Interval ci;
  std::vector<double> samples;
};

template <typename MetricFn>
BootstrapResult bootstrap_ci(const ScoredSet& s, MetricFn metric, std::size_t n,
                             std::uint64_t seed, double level = 0.95) {
  s.require_both_classes();
  BootstrapResult out;
  out.samples.reserve(n);
  for (std::size_t b = 0; b < n; ++b)
    out.samples.push_back(metric(resample(s, bootstrap_indices(s.labels, seed, b))));
  double tail = (1.0 - level) / 2.0;
  out.ci = {percentile(out.samples, tail), percentile(out.samples, 1.0 - tail)};
  return out;
}

// ------------------------------------------------------------
// paired t-test
// ------------------------------------------------------------

struct Significance {
  double p_value = 1.0;
  bool significant = false;
  bool degenerate = false;  // zero-variance differences; limit convention used
};

inline Significance pairwise_significance(const std::vector<double>& best,
                                          const std::vector<double>& other, double alpha = 0.05) {
  if (best.size() != other.size() || best.size() < 2)
    throw UndefinedMetricError("paired t-test needs two equal-length samples (n >= 2)");
  const auto n = static_cast<double>(best.size());
  double mean = 0;
  for (std::size_t i = 0; i < best.size(); ++i) mean += best[i] - other[i];
  mean /= n;
  double ss = 0;
  for (std::size_t i = 0; i < best.size(); ++i) {
    double d = best[i] - other[i] - mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / (n - 1));
  Significance out;
  if (sd == 0 || sd < 1e-15 * std::abs(mean)) {
    out.degenerate = true;
    out.p_value = (mean == 0) ? 1.0 : 0.0;
  } else {
    double t = mean / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  out.significant = out.p_value < alpha;
  return out;
}

// ------------------------------------------------------------
// evaluation report
// ------------------------------------------------------------

struct MetricEstimate {
  double point = 0;
  Interval ci;
};

struct EvalReport {
  std::array<MetricEstimate, 5> metrics{};
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  double operating_threshold = 0;
  // bootstrap_samples[b][m]: metric m on resample b.
  std::vector<std::array<double, 5>> bootstrap_samples;
  // Filled in once the per-task best family is known: per metric vs best.
  std::array<Significance, 5> significance{};
  std::string compared_against;

  const MetricEstimate& get(Metric m) const { return metrics[static_cast<int>(m)]; }
  std::vector<double> samples_of(Metric m) const {
    std::vector<double> v;
    for (const auto& row : bootstrap_samples) v.push_back(row[static_cast<int>(m)]);
    return v;
  }
};

// The operating threshold comes from the validation scores; every metric
// and its percentile CI comes from the test scores.
inline EvalReport evaluate(const ScoredSet& validation, const ScoredSet& test,
                           std::size_t n_bootstrap, std::uint64_t seed) {
  EvalReport r;
  r.operating_threshold = select_operating_threshold(validation);
  test.require_both_classes();
  r.roc = roc_curve(test);
  r.pr = pr_curve(test);
  for (auto m : kAllMetrics)
    r.metrics[static_cast<int>(m)].point = compute_metric(m, test, r.operating_threshold);
  for (std::size_t b = 0; b < n_bootstrap; ++b) {
    auto rs = resample(test, bootstrap_indices(test.labels, seed, b));
    std::array<double, 5> row{};
    for (auto m : kAllMetrics)
      row[static_cast<int>(m)] = compute_metric(m, rs, r.operating_threshold);
    r.bootstrap_samples.push_back(row);
  }
  for (auto m : kAllMetrics) {
    auto v = r.samples_of(m);
    r.metrics[static_cast<int>(m)].ci = {percentile(v, 0.025), percentile(v, 0.975)};
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["operating_threshold"] = r.operating_threshold;
  for (auto m : kAllMetrics) {
    const auto& e = r.get(m);
    const auto& sig = r.significance[static_cast<int>(m)];
    j["metrics"][to_string(m)] = {{"point", e.point},
                                  {"ci_low", e.ci.low},
                                  {"ci_high", e.ci.high},
                                  {"p_value", sig.p_value},
                                  {"significant", sig.significant},
                                  {"degenerate_test", sig.degenerate}};
  }
  j["compared_against"] = r.compared_against;
  j["bootstrap_samples"] = r.bootstrap_samples;
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.operating_threshold = j.at("operating_threshold").get<double>();
  for (auto m : kAllMetrics) {
    const auto& e = j.at("metrics").at(to_string(m));
    auto k = static_cast<int>(m);
    r.metrics[k] = {e.at("point").get<double>(),
                    {e.at("ci_low").get<double>(), e.at("ci_high").get<double>()}};
    r.significance[k] = {e.at("p_value").get<double>(), e.at("significant").get<bool>(),
                         e.at("degenerate_test").get<bool>()};
  }
  r.compared_against = j.at("compared_against").get<std::string>();
  r.bootstrap_samples = j.at("bootstrap_samples").get<std::vector<std::array<double, 5>>>();
  return r;
}

}  // namespace clinpred
