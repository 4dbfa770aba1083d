#include <gtest/gtest.h>

#include <random>

#include "clinpred/explain.hpp"
#include "support.hpp"

using namespace clinpred;
using namespace testing_support;

namespace {

struct Data {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
};

// Independent standard-normal features; y ~ Bernoulli(sigmoid(w . x)).
Data linear_data(std::size_t n, const std::vector<double>& w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Data d;
  const auto k = static_cast<Eigen::Index>(w.size());
  d.x.values = Matrix(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index j = 0; j < k; ++j) d.x.names.push_back("f" + std::to_string(j));
  for (Eigen::Index i = 0; i < d.x.values.rows(); ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      d.x.values(i, j) = g(rng);
      z += w[static_cast<std::size_t>(j)] * d.x.values(i, j);
    }
    d.y.push_back(u(rng) < sigmoid(z));
  }
  return d;
}

ModelArtifact fit_lr(const Data& d, double C = 10.0) {
  ModelArtifact a;
  a.family = Family::lr;
  a.hyperparams = {Family::lr, {{"C", C}}};
  a.state = LogisticModel::fit(d.x.values, d.y, {C});
  a.preprocessor.feature_layout = d.x.names;
  return a;
}

double importance_of(const ImportanceReport& r, const std::string& name) {
  for (const auto& e : r.entries)
    if (e.name == name) return e.importance;
  ADD_FAILURE() << name;
  return 0;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1 - 6 * d2 / (n * (n * n - 1));
}

}  // namespace

TEST(Importance, IgnoredFeatureGetsZero) {
  auto d = linear_data(400, {2.0, 1.0, 0.0}, 1);
  auto a = fit_lr(d);
  std::get<LogisticModel>(a.state).weights[2] = 0.0;
  auto r = marginal_importance(a, d.x, d.y);
  EXPECT_EQ(importance_of(r, "f2"), 0.0);
  EXPECT_NEAR(r.total(), 1.0, 1e-12);
  EXPECT_FALSE(r.degenerate);
}

TEST(Importance, SingleInformativeFeatureDominates) {
  std::vector<double> w(10, 0.0);
  w[3] = 3.0;
  auto d = linear_data(2000, w, 2);
  auto r = marginal_importance(fit_lr(d), d.x, d.y);
  EXPECT_GE(importance_of(r, "f3"), 0.9);
  for (std::size_t j = 0; j < 10; ++j) {
    if (j == 3) continue;
    EXPECT_LT(importance_of(r, "f" + std::to_string(j)), 0.05);
  }
  // Leave-one-out refit oracle: dropping f3 hurts the training loss most.
  double worst = 0;
  std::size_t worst_j = 0;
  for (Eigen::Index j = 0; j < 10; ++j) {
    Data loo = d;
    loo.x.values.col(j).setZero();
    auto m = LogisticModel::fit(loo.x.values, loo.y, {10.0});
    double loss = binary_cross_entropy(m.predict(loo.x.values), to_double_labels(loo.y));
    if (loss > worst) worst = loss, worst_j = static_cast<std::size_t>(j);
  }
  EXPECT_EQ(r.ranked().front().name, "f" + std::to_string(worst_j));
}

TEST(Importance, DuplicatedFeaturesShareCredit) {
  auto single = linear_data(1500, {2.5, 0.5, 0.0}, 3);
  const double alone = importance_of(marginal_importance(fit_lr(single, 1.0), single.x, single.y), "f0");
  Data dup = single;
  dup.x.values.conservativeResize(Eigen::NoChange, 4);
  dup.x.values.col(3) = dup.x.values.col(0);
  dup.x.names.push_back("f0_copy");
  auto r = marginal_importance(fit_lr(dup, 1.0), dup.x, dup.y);
  const double a = importance_of(r, "f0"), b = importance_of(r, "f0_copy");
  EXPECT_GT(a, 0);
  EXPECT_GT(b, 0);
  EXPECT_LT(a, alone);
  EXPECT_LT(b, alone);
}

TEST(Importance, RankCorrelationWithWeightMagnitude) {
  const std::vector<double> w = {3.0, -2.5, 2.0, -1.5, 1.0, 0.7, -0.4, 0.2};
  auto d = linear_data(500, w, 4);
  auto a = fit_lr(d);
  auto r = marginal_importance(a, d.x, d.y);
  std::vector<double> imp, mag;
  for (std::size_t j = 0; j < w.size(); ++j) {
    imp.push_back(r.entries[j].importance);
    mag.push_back(std::abs(std::get<LogisticModel>(a.state).weights[static_cast<Eigen::Index>(j)]));
  }
  EXPECT_GE(spearman(imp, mag), 0.9);
}

TEST(Importance, SingleClassLabelsAreUndefined) {
  auto d = linear_data(50, {1.0}, 5);
  auto a = fit_lr(d);
  std::vector<std::uint8_t> ones(50, 1);
  EXPECT_THROW(marginal_importance(a, d.x, ones), UndefinedMetricError);
}

TEST(Importance, MaskedScoresEqualFullRescore) {
  auto d = linear_data(80, {1.0, -1.0, 0.5}, 6);
  d.x.values(3, 1) = 0.0;
  auto a = fit_lr(d);
  auto base = predict(a, d.x);
  for (Eigen::Index j = 0; j < 3; ++j) {
    Matrix masked = d.x.values;
    masked.col(j).setZero();
    EXPECT_EQ(masked_scores(a, d.x.values, j, base), predict_features(a, masked));
  }
}

TEST(Importance, DegenerateWhenNoFeatureMatters) {
  auto d = linear_data(60, {1.0, 1.0}, 7);
  auto a = fit_lr(d);
  std::get<LogisticModel>(a.state).weights.setZero();
  auto r = marginal_importance(a, d.x, d.y);
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.total(), 1.0, 1e-12);
}

TEST(Grouping, OneHotSummedIndicatorsKept) {
  auto c = tiny_cohort(
      "age,sars,adm,icu,v,x\n1,negative,0,0,red,1\n1,negative,0,0,blue,2\n1,negative,0,0,,\n"
      "1,negative,0,0,red,4\n1,negative,0,0,blue,5\n1,negative,0,0,red,6\n1,negative,0,0,red,7\n");
  PreprocessOptions opt;
  opt.discrete_max_unique = 3;
  auto st = fit_preprocessor(c, opt);
  const auto info = st.feature_info();
  std::vector<ImportanceEntry> e;
  double one_hot[] = {0.1, 0.2, 0.0};
  std::size_t k = 0;
  for (std::size_t i = 0; i < info.size(); ++i) {
    double v = 0;
    if (info[i].source == "v") v = one_hot[k++];
    else if (info[i].role == FeatureRole::continuous) v = 0.4;
    else if (info[i].role == FeatureRole::missing_indicator) v = 0.3;
    e.push_back({st.feature_layout[i], v});
  }
  ASSERT_EQ(k, 3u);
  auto g = group_entries(e, st);
  std::map<std::string, double> by_name;
  double sum = 0;
  for (const auto& x : g) by_name[x.name] = x.importance, sum += x.importance;
  EXPECT_NEAR(by_name.at("v"), 0.3, 1e-15);
  EXPECT_EQ(by_name.at("x"), 0.4);
  EXPECT_EQ(by_name.at("x MISSING"), 0.3);
  EXPECT_EQ(by_name.at("age"), 0.0);
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_EQ(g.size(), 4u);
}

TEST(Report, TableAndJsonRoundTrip) {
  ImportanceReport r;
  for (int i = 0; i < 15; ++i) r.entries.push_back({"f" + std::to_string(i), (i + 1) / 120.0});
  r.model_ref = "lr/icu";
  auto t = format_importance_table(r, kImportanceDisplayCut);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 11);
  EXPECT_EQ(t.substr(0, t.find('\n')), "feature\timportance_pct\trank");
  EXPECT_NE(t.find("f14\t12.5000\t1\n"), std::string::npos);
  auto back = importance_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}
