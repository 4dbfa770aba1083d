#include <gtest/gtest.h>

#include <random>

#include "clinpred/metrics.hpp"
#include "clinpred/model.hpp"
#include "support.hpp"

using namespace clinpred;
using namespace testing_support;

namespace {

struct Fixture {
  Matrix x;
  std::vector<std::uint8_t> y;
};

// y = 1 iff x0 + 0.5 x1 > 0.2, optionally with label noise.
Fixture threshold_rule(std::size_t n, std::size_t d, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Fixture f{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), {}};
  for (Eigen::Index i = 0; i < f.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.x.cols(); ++j) f.x(i, j) = g(rng);
    bool label = f.x(i, 0) + 0.5 * f.x(i, 1) > 0.2;
    if (u(rng) < noise) label = !label;
    f.y.push_back(label);
  }
  return f;
}

Hyperparams params(Family f, std::map<std::string, ParamValue> v) { return {f, std::move(v)}; }

Hyperparams default_params(Family f) {
  using S = std::string;
  switch (f) {
    case Family::lr: return params(f, {{"C", 1.0}});
    case Family::nn:
      return params(f, {{"hidden_units", 16L}, {"layers", 2L}, {"activation", S("elu")}, {"batch_size", 32L},
                        {"l2", 0.0001}, {"learning_rate", 0.03}, {"dropout", 0.1}});
    case Family::rf: return params(f, {{"depth", 4L}, {"trees", 32L}});
    case Family::svm: return params(f, {{"C", 1.0}, {"kernel", S("rbf")}, {"degree", 3L}});
    case Family::xgb:
      return params(f, {{"subsample", 0.75}, {"max_depth", 3L}, {"gamma", 0.1}, {"learning_rate", 0.3},
                        {"l1", 0.001}, {"l2", 1.0}, {"rounds", 10L}});
  }
  return {};
}

const Family kFamilies[] = {Family::lr, Family::nn, Family::rf, Family::svm, Family::xgb};

}  // namespace

TEST(Logistic, ZeroWeightsGiveHalf) {
  LogisticModel m;
  m.weights = Vector::Zero(3);
  Matrix x = Matrix::Random(4, 3);
  for (double p : m.predict(x)) EXPECT_EQ(p, 0.5);
}

TEST(Logistic, LearnsSeparableRule) {
  auto f = threshold_rule(300, 3, 1);
  auto m = LogisticModel::fit(f.x, f.y, {10.0});
  EXPECT_GT(roc_auc({m.predict(f.x), f.y}), 0.99);
}

TEST(Boosting, SingleStumpOrdersSides) {
  Matrix x(8, 1);
  x << -4, -3, -2, -1, 1, 2, 3, 4;
  std::vector<std::uint8_t> y = {0, 0, 0, 0, 1, 1, 1, 1};
  BoostedTreesModel::Options o;
  o.rounds = 1;
  o.max_depth = 1;
  o.l1 = 0.5;
  o.subsample = 1.0;
  auto m = BoostedTreesModel::fit(x, y, o, 1);
  auto p = m.predict(x);
  for (int neg = 0; neg < 4; ++neg)
    for (int pos = 4; pos < 8; ++pos) EXPECT_GT(p[pos], p[neg]);
  // Hand-built stump: g = 0.5 - y, h = 0.25 per row, leaf = -lr * soft(G, l1) / (H + l2).
  const double leaf = 0.3 * (4 * 0.5 - 0.5) / (4 * 0.25 + 1.0);
  EXPECT_NEAR(p[7], 1 / (1 + std::exp(-leaf)), 1e-12);
  EXPECT_NEAR(p[0], 1 / (1 + std::exp(leaf)), 1e-12);
}

TEST(Boosting, TrainingLossNonIncreasingWithoutSubsampling) {
  auto f = threshold_rule(200, 4, 2, 0.1);
  BoostedTreesModel::Options o;
  o.rounds = 20;
  o.max_depth = 3;
  auto m = BoostedTreesModel::fit(f.x, f.y, o, 3);
  ASSERT_EQ(m.training_loss.size(), 20u);
  for (std::size_t k = 1; k < m.training_loss.size(); ++k)
    EXPECT_LE(m.training_loss[k], m.training_loss[k - 1] + 1e-12);
}

TEST(Forest, NoiselessRuleTrainingAccuracy) {
  auto f = threshold_rule(200, 2, 4);
  auto m = RandomForestModel::fit(f.x, f.y, {256, 5, 1}, 5);
  auto p = m.predict(f.x);
  std::size_t right = 0;
  for (std::size_t i = 0; i < p.size(); ++i) right += (p[i] >= 0.5) == (f.y[i] == 1);
  EXPECT_GE(right / 200.0, 0.99);
}

TEST(Forest, ScoreIsMeanOfTreeLeafFractions) {
  auto f = threshold_rule(100, 3, 6, 0.2);
  auto m = RandomForestModel::fit(f.x, f.y, {16, 3, 1}, 7);
  Matrix x = f.x.topRows(5);
  auto p = m.predict(x);
  for (Eigen::Index i = 0; i < 5; ++i) {
    double sum = 0;
    for (const auto& t : m.trees) {
      int k = 0;
      while (t.nodes[k].feature >= 0) k = x(i, t.nodes[k].feature) <= t.nodes[k].threshold ? t.nodes[k].left : t.nodes[k].right;
      EXPECT_GE(t.nodes[k].value, 0.0);
      EXPECT_LE(t.nodes[k].value, 1.0);
      sum += t.nodes[k].value;
    }
    EXPECT_NEAR(p[i], sum / 16, 1e-12);
  }
}

TEST(Forest, WorkerCountDoesNotChangeTrees) {
  auto f = threshold_rule(120, 3, 8, 0.1);
  auto a = RandomForestModel::fit(f.x, f.y, {32, 4, 1}, 9);
  auto b = RandomForestModel::fit(f.x, f.y, {32, 4, 4}, 9);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  for (auto act : {Activation::elu, Activation::selu, Activation::relu})
    for (long layers : {1L, 3L}) EXPECT_LT(nn_gradient_max_rel_error(act, layers, 17), 1e-4);
}

TEST(Mlp, KeepsBestValidationEpoch) {
  auto tr = threshold_rule(200, 4, 10, 0.15);
  auto va = threshold_rule(80, 4, 11, 0.15);
  MlpModel::Options o;
  o.hidden_units = 16;
  o.learning_rate = 0.03;
  o.max_epochs = 60;
  auto m = MlpModel::fit(tr.x, tr.y, va.x, va.y, o, 12);
  ASSERT_GE(m.best_epoch, 0);
  ASSERT_FALSE(m.validation_losses.empty());
  const double best = *std::min_element(m.validation_losses.begin(), m.validation_losses.end());
  EXPECT_EQ(m.validation_losses[static_cast<std::size_t>(m.best_epoch)], best);
  EXPECT_NEAR(m.validation_loss(va.x, to_double_labels(va.y)), best, 1e-12);
}

TEST(Svm, DualFeasibility) {
  auto f = threshold_rule(80, 3, 13, 0.1);
  std::vector<double> y;
  for (auto l : f.y) y.push_back(l ? 1.0 : -1.0);
  for (auto type : {KernelType::rbf, KernelType::polynomial, KernelType::sigmoid}) {
    Kernel k{type, Kernel::scale_gamma(f.x), 0.0, 3};
    SmoOptions o;
    o.C = 1.0;
    auto r = solve_smo(f.x, y, k, o);
    double balance = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_GE(r.alpha[i], 0.0);
      EXPECT_LE(r.alpha[i], 1.0);
      balance += r.alpha[i] * y[i];
    }
    EXPECT_LT(std::abs(balance), 1e-6);
    EXPECT_TRUE(r.converged);
  }
}

TEST(Artifact, SingleClassTrainingGivesConstantModel) {
  auto f = threshold_rule(20, 2, 14);
  std::vector<std::uint8_t> zeros(20, 0);
  auto a = train_model(default_params(Family::rf), {f.x, zeros, f.x, f.y}, 1);
  EXPECT_TRUE(a.is_constant());
  for (double p : predict_features(a, f.x)) EXPECT_EQ(p, 0.0);
  EXPECT_FALSE(a.warnings.empty());
}

TEST(Artifact, EveryFamilyScoresInUnitIntervalDeterministically) {
  auto tr = threshold_rule(150, 4, 15, 0.1);
  auto va = threshold_rule(60, 4, 16, 0.1);
  for (auto fam : kFamilies) {
    auto a = train_model(default_params(fam), {tr.x, tr.y, va.x, va.y}, 21);
    auto b = train_model(default_params(fam), {tr.x, tr.y, va.x, va.y}, 21);
    auto p = predict_features(a, va.x);
    EXPECT_EQ(p, predict_features(b, va.x)) << to_string(fam);
    for (double s : p) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
    EXPECT_GT(roc_auc({p, va.y}), 0.8) << to_string(fam);
  }
}

TEST(Artifact, RoundTripIsBitExact) {
  auto tr = threshold_rule(150, 4, 17, 0.1);
  auto va = threshold_rule(60, 4, 18, 0.1);
  auto fx = threshold_rule(100, 4, 19);
  for (auto fam : kFamilies) {
    auto a = train_model(default_params(fam), {tr.x, tr.y, va.x, va.y}, 22);
    a.operating_threshold = 0.123456789;
    auto back = deserialize_artifact(serialize_artifact(a));
    EXPECT_EQ(predict_features(a, fx.x), predict_features(back, fx.x)) << to_string(fam);
    EXPECT_EQ(serialize_artifact(back), serialize_artifact(a));
    EXPECT_EQ(back.operating_threshold, a.operating_threshold);
  }
}

TEST(Artifact, LayoutMismatchIsRejected) {
  auto tr = threshold_rule(60, 2, 20);
  auto a = train_model(default_params(Family::lr), {tr.x, tr.y, tr.x, tr.y}, 1);
  a.preprocessor.feature_layout = {"a", "b"};
  FeatureMatrix m{tr.x, {"b", "a"}, {}};
  EXPECT_THROW(predict(a, m), SchemaMismatchError);
  m.names = {"a", "b"};
  EXPECT_NO_THROW(predict(a, m));
}

TEST(Hyperparams, ValidationRejectsOutOfSpace) {
  auto hp = default_params(Family::svm);
  EXPECT_NO_THROW(validate(hp));
  hp.values["degree"] = 4L;
  EXPECT_THROW(validate(hp), ConfigError);
  auto nn = default_params(Family::nn);
  nn.values["dropout"] = 0.3;
  EXPECT_THROW(validate(nn), ConfigError);
}
