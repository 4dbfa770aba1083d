#pragma once

// Random forest of Gini classification trees grown on bootstrap samples with
// per-split feature subsampling. A tree's score is the positive fraction of
// the (in-bag) training samples in the leaf; the forest averages trees.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

// Flat binary tree shared by the forest and the boosted ensemble. Leaves
// have feature == -1; internal nodes send x[feature] <= threshold left.
struct DecisionTree {
  struct Node {
    int feature = -1;
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0;
  };
  std::vector<Node> nodes;

  double predict(const double* row) const {
    int k = 0;
    while (nodes[k].feature >= 0) k = row[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }

  bool uses_feature(int f) const {
    for (const auto& n : nodes)
      if (n.feature == f) return true;
    return false;
  }

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array(), t = nlohmann::json::array(),
                   l = nlohmann::json::array(), r = nlohmann::json::array(),
                   v = nlohmann::json::array();
    for (const auto& n : nodes) {
      f.push_back(n.feature);
      t.push_back(n.threshold);
      l.push_back(n.left);
      r.push_back(n.right);
      v.push_back(n.value);
    }
    return {{"feature", f}, {"threshold", t}, {"left", l}, {"right", r}, {"value", v}};
  }

  static DecisionTree from_json(const nlohmann::json& j) {
    DecisionTree tree;
    auto f = j.at("feature").get<std::vector<int>>();
    auto t = j.at("threshold").get<std::vector<double>>();
    auto l = j.at("left").get<std::vector<int>>();
    auto r = j.at("right").get<std::vector<int>>();
    auto v = j.at("value").get<std::vector<double>>();
    for (std::size_t k = 0; k < f.size(); ++k) tree.nodes.push_back({f[k], t[k], l[k], r[k], v[k]});
    return tree;
  }
};

struct RandomForestModel {
  struct Options {
    long trees = 64;
    long depth = 3;
    std::size_t workers = 1;
  };

  std::vector<DecisionTree> trees;

  double predict_row(const double* row) const {
    double s = 0;
    for (const auto& t : trees) s += t.predict(row);
    return s / static_cast<double>(trees.size());
  }

  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_row(x.row(i).data());
    return out;
  }

  // Grows one tree on in-bag counts `weight` (bootstrap multiplicities).
  static DecisionTree grow_tree(const Matrix& x, const std::vector<std::uint8_t>& y,
                                const std::vector<int>& weight, long max_depth,
                                std::size_t features_per_split, std::mt19937_64& rng) {
    const auto d = static_cast<int>(x.cols());
    DecisionTree tree;
    std::vector<std::size_t> in_bag;
    for (std::size_t i = 0; i < weight.size(); ++i)
      if (weight[i] > 0) in_bag.push_back(i);

    struct Work {
      int node;
      std::vector<std::size_t> rows;
      long depth;
    };
    std::vector<Work> stack;
    tree.nodes.push_back({});
    stack.push_back({0, std::move(in_bag), 0});
    std::vector<int> all_features(static_cast<std::size_t>(d));
    std::iota(all_features.begin(), all_features.end(), 0);
    std::vector<std::pair<double, std::size_t>> sorted;

    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      double total = 0, pos = 0;
      for (auto i : w.rows) {
        total += weight[i];
        pos += weight[i] * y[i];
      }
      tree.nodes[w.node].value = total > 0 ? pos / total : 0.0;
      if (w.depth >= max_depth || pos == 0 || pos == total) continue;

      // Sample features without replacement, then scan in index order so the
      // first best gain wins ties.
      std::vector<int> feats = all_features;
      for (std::size_t k = 0; k < features_per_split; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, feats.size() - 1);
        std::swap(feats[k], feats[pick(rng)]);
      }
      feats.resize(features_per_split);
      std::sort(feats.begin(), feats.end());

      const double parent_gini = 1.0 - (pos / total) * (pos / total) -
                                 ((total - pos) / total) * ((total - pos) / total);
      double best_gain = 0;
      int best_feature = -1;
      double best_threshold = 0;
      for (int f : feats) {
        sorted.clear();
        for (auto i : w.rows) sorted.emplace_back(x(static_cast<Eigen::Index>(i), f), i);
        std::sort(sorted.begin(), sorted.end());
        double left_n = 0, left_pos = 0;
        for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
          left_n += weight[sorted[k].second];
          left_pos += weight[sorted[k].second] * y[sorted[k].second];
          if (sorted[k].first == sorted[k + 1].first) continue;
          double right_n = total - left_n, right_pos = pos - left_pos;
          double gl = 1.0 - std::pow(left_pos / left_n, 2) - std::pow(1 - left_pos / left_n, 2);
          double gr = 1.0 - std::pow(right_pos / right_n, 2) - std::pow(1 - right_pos / right_n, 2);
          double gain = parent_gini - (left_n * gl + right_n * gr) / total;
          if (gain > best_gain + 1e-15) {
            best_gain = gain;
            best_feature = f;
            best_threshold = 0.5 * (sorted[k].first + sorted[k + 1].first);
          }
        }
      }
      if (best_feature < 0) continue;

      std::vector<std::size_t> left_rows, right_rows;
      for (auto i : w.rows)
        (x(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? left_rows : right_rows).push_back(i);
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& node = tree.nodes[w.node];
      node.feature = best_feature;
      node.threshold = best_threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({left + 1, std::move(right_rows), w.depth + 1});
      stack.push_back({left, std::move(left_rows), w.depth + 1});
    }
    return tree;
  }

  static RandomForestModel fit(const Matrix& x, const std::vector<std::uint8_t>& y,
                               const Options& opt, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    const std::size_t mtry =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))), 1, d);
    RandomForestModel m;
    m.trees.resize(static_cast<std::size_t>(opt.trees));
    parallel_for(m.trees.size(), opt.workers, [&](std::size_t t) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<int> weight(n, 0);
      for (std::size_t k = 0; k < n; ++k) ++weight[pick(rng)];
      m.trees[t] = grow_tree(x, y, weight, opt.depth, mtry, rng);
    });
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : trees) j.push_back(t.to_json());
    return {{"trees", j}};
  }
  static RandomForestModel from_json(const nlohmann::json& j) {
    RandomForestModel m;
    for (const auto& t : j.at("trees")) m.trees.push_back(DecisionTree::from_json(t));
    return m;
  }
};

}  // namespace clinpred
