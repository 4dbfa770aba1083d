#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "clinpred/data.hpp"
#include "clinpred/metrics.hpp"
#include "clinpred/hyperparams.hpp"
#include "clinpred/models/mlp.hpp"
#include "clinpred/preprocess.hpp"

namespace testing_support {

using namespace clinpred;

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("clinpred_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Minimal schema over columns named "sars", "adm", "icu", "age".
inline SchemaConfig tiny_schema() {
  SchemaConfig s;
  s.label_sars_cov_2 = "sars";
  s.label_admission = {"adm"};
  s.label_icu = {"icu"};
  s.age_column = "age";
  s.id_column = std::nullopt;
  s.exclude = {};
  return s;
}

inline CohortTable tiny_cohort(const std::string& csv) { return parse_cohort(csv, tiny_schema()); }

inline ScoredSet random_scored_set(std::mt19937_64& rng, std::size_t n, bool allow_ties) {
  ScoredSet s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 4);
  do {
    s.scores.clear();
    s.labels.clear();
    for (std::size_t i = 0; i < n; ++i) {
      s.scores.push_back(allow_ties ? coarse(rng) / 4.0 : u(rng));
      s.labels.push_back(u(rng) < 0.4 ? 1 : 0);
    }
  } while (s.positives() == 0 || s.negatives() == 0);
  return s;
}

// Pairwise concordance: P(score+ > score-) + 0.5 P(tie).
inline double concordance_auc(const ScoredSet& s) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s.labels[i] == 1 && s.labels[j] == 0) {
        den += 1;
        if (s.scores[i] > s.scores[j]) num += 1;
        else if (s.scores[i] == s.scores[j]) num += 0.5;
      }
  return num / den;
}

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion_at(const ScoredSet& s, double t) {
  Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool pred = s.scores[i] >= t;
    if (s.labels[i]) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

// Candidate thresholds: every distinct score plus one above the maximum.
inline std::vector<double> scan_thresholds(const ScoredSet& s) {
  std::vector<double> t = s.scores;
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(t.back() + 1.0);
  return t;
}

// Step-wise area: sum over distinct thresholds (descending) of
// (recall gain) * precision.
inline double scan_aupr(const ScoredSet& s) {
  auto t = scan_thresholds(s);
  std::sort(t.begin(), t.end(), std::greater<>());
  double area = 0, prev_recall = 0;
  for (double th : t) {
    auto c = confusion_at(s, th);
    if (c.tp + c.fp == 0) continue;
    double recall = c.tp / (c.tp + c.fn);
    area += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
    prev_recall = recall;
  }
  return area;
}

inline double scan_spec_at_95(const ScoredSet& s) {
  double best = 0;
  for (double th : scan_thresholds(s)) {
    auto c = confusion_at(s, th);
    if (c.tp / (c.tp + c.fn) >= 0.95) best = std::max(best, c.tn / (c.tn + c.fp));
  }
  return best;
}

// Largest per-parameter relative error between the analytic training-loss
// gradient and central differences, on a 10-row fixture without dropout.
inline double nn_gradient_max_rel_error(Activation act, long layers, std::uint64_t seed, double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(10, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  std::vector<double> y = {0, 1, 0, 1, 1, 0, 0, 1, 0, 1};
  MlpModel::Options o;
  o.hidden_units = 5;
  o.layers = layers;
  o.activation = act;
  auto m = MlpModel::initialize(4, o, rng);
  for (Eigen::Index k = 0; k < m.theta.size(); ++k) m.theta[k] += 0.1 * n(rng);
  const double l2 = 1e-4;
  Vector grad;
  m.loss_and_gradient(m.theta, x, y, l2, {}, &grad);
  double worst = 0;
  for (Eigen::Index k = 0; k < m.theta.size(); ++k) {
    Vector up = m.theta, down = m.theta;
    up[k] += eps;
    down[k] -= eps;
    const double fd = (m.loss_and_gradient(up, x, y, l2, {}, nullptr) -
                       m.loss_and_gradient(down, x, y, l2, {}, nullptr)) / (2 * eps);
    const double scale = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
    worst = std::max(worst, std::abs(fd - grad[k]) / scale);
  }
  return worst;
}

struct SamplingCheck {
  std::string worst_param;
  double min_p = 1.0;        // smallest chi-square p over every discrete parameter
  double dropout_mean = 0;   // mean sampled dropout
};

inline SamplingCheck hyperparam_sampling_check(std::size_t draws, std::uint64_t seed) {
  SamplingCheck out;
  for (auto fam : {Family::lr, Family::nn, Family::rf, Family::svm, Family::xgb}) {
    std::map<std::string, std::map<std::size_t, std::size_t>> counts;
    double dropout = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      auto hp = sample_hyperparams(fam, derive_seed(seed, i));
      for (const auto& spec : search_space(fam)) {
        const auto& v = hp.values.at(spec.name);
        if (!spec.is_discrete()) {
          dropout += std::get<double>(v);
          continue;
        }
        auto it = std::find(spec.choices.begin(), spec.choices.end(), v);
        ++counts[spec.name][static_cast<std::size_t>(it - spec.choices.begin())];
      }
    }
    if (fam == Family::nn) out.dropout_mean = dropout / static_cast<double>(draws);
    for (const auto& spec : search_space(fam)) {
      if (!spec.is_discrete()) continue;
      const double k = static_cast<double>(spec.choices.size());
      const double expected = static_cast<double>(draws) / k;
      double chi2 = 0;
      for (std::size_t c = 0; c < spec.choices.size(); ++c) {
        const double o = static_cast<double>(counts[spec.name][c]);
        chi2 += (o - expected) * (o - expected) / expected;
      }
      const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(k - 1), chi2));
      if (p < out.min_p) {
        out.min_p = p;
        out.worst_param = to_string(fam) + "." + spec.name;
      }
    }
  }
  return out;
}

}  // namespace testing_support
