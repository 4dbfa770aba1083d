#pragma once

// Gradient-boosted regression trees on the logistic loss (second-order
// leaf values, L1/L2 leaf regularization, minimum split gain, row
// subsampling). Splits are found by exact greedy search over presorted
// feature values, one tree level at a time.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/models/forest.hpp"
#include "clinpred/models/logistic.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

struct BoostedTreesModel {
  struct Options {
    double subsample = 1.0;
    long max_depth = 3;
    double gamma = 0.0;
    double learning_rate = 0.3;
    double l1 = 0.0;
    double l2 = 1.0;
    long rounds = 10;
    double min_child_weight = 1.0;
  };

  double base_margin = 0.0;
  std::vector<DecisionTree> trees;  // leaf values already include the learning rate
  std::vector<double> training_loss;  // mean logistic loss after each round

  double margin_row(const double* row) const {
    double m = base_margin;
    for (const auto& t : trees) m += t.predict(row);
    return m;
  }

  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = sigmoid(margin_row(x.row(i).data()));
    return out;
  }

  static double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
  }
  static double leaf_score(double g, double h, const Options& o) {
    double t = soft_threshold(g, o.l1);
    return t * t / (h + o.l2);
  }
  static double leaf_weight(double g, double h, const Options& o) {
    if (h + o.l2 <= 0) return 0.0;
    return -soft_threshold(g, o.l1) / (h + o.l2);
  }

  // Presorted row order per feature, shared by all rounds.
  static std::vector<std::vector<std::uint32_t>> presort(const Matrix& x) {
    std::vector<std::vector<std::uint32_t>> order(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      auto& o = order[static_cast<std::size_t>(f)];
      o.resize(static_cast<std::size_t>(x.rows()));
      std::iota(o.begin(), o.end(), 0u);
      std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return x(a, f) < x(b, f); });
    }
    return order;
  }

  static DecisionTree grow_tree(const Matrix& x, const std::vector<double>& g,
                                const std::vector<double>& h, const std::vector<std::uint8_t>& in_sample,
                                const std::vector<std::vector<std::uint32_t>>& order, const Options& o) {
    const auto n = static_cast<std::size_t>(x.rows());
    DecisionTree tree;
    tree.nodes.push_back({});
    std::vector<int> node_of(n, -1);  // current leaf of each sampled row
    double g0 = 0, h0 = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (in_sample[i]) {
        node_of[i] = 0;
        g0 += g[i];
        h0 += h[i];
      }
    struct Stat {
      double g = 0, h = 0;
    };
    std::vector<int> frontier = {0};
    std::vector<Stat> stat = {{g0, h0}};

    for (long depth = 0; depth < o.max_depth && !frontier.empty(); ++depth) {
      // Slot per frontier node.
      std::vector<int> slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) slot[frontier[s]] = static_cast<int>(s);
      struct Best {
        double gain = 0;
        int feature = -1;
        double threshold = 0;
      };
      std::vector<Best> best(frontier.size());
      std::vector<Stat> left(frontier.size());
      std::vector<double> last_value(frontier.size());
      std::vector<char> seen(frontier.size());

      for (int f = 0; f < static_cast<int>(x.cols()); ++f) {
        std::fill(left.begin(), left.end(), Stat{});
        std::fill(seen.begin(), seen.end(), 0);
        for (std::uint32_t i : order[static_cast<std::size_t>(f)]) {
          int node = node_of[i];
          if (node < 0 || slot[node] < 0) continue;
          const auto s = static_cast<std::size_t>(slot[node]);
          const double v = x(i, f);
          // Candidate boundary between the previous distinct value and v.
          if (seen[s] && v != last_value[s]) {
            const Stat& total = stat[s];
            const Stat& l = left[s];
            const Stat r{total.g - l.g, total.h - l.h};
            if (l.h >= o.min_child_weight && r.h >= o.min_child_weight) {
              double gain = 0.5 * (leaf_score(l.g, l.h, o) + leaf_score(r.g, r.h, o) -
                                   leaf_score(total.g, total.h, o)) - o.gamma;
              if (gain > best[s].gain + 1e-15) best[s] = {gain, f, 0.5 * (last_value[s] + v)};
            }
          }
          left[s].g += g[i];
          left[s].h += h[i];
          last_value[s] = v;
          seen[s] = 1;
        }
      }

      std::vector<int> next;
      std::vector<Stat> next_stat;
      for (std::size_t s = 0; s < frontier.size(); ++s) {
        if (best[s].feature < 0) continue;
        const int node = frontier[s];
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        tree.nodes[node].feature = best[s].feature;
        tree.nodes[node].threshold = best[s].threshold;
        tree.nodes[node].left = l;
        tree.nodes[node].right = l + 1;
        next.push_back(l);
        next.push_back(l + 1);
        next_stat.push_back({});
        next_stat.push_back({});
      }
      if (next.empty()) break;
      std::vector<int> child_slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < next.size(); ++s) child_slot[next[s]] = static_cast<int>(s);
      for (std::size_t i = 0; i < n; ++i) {
        int node = node_of[i];
        if (node < 0 || tree.nodes[node].feature < 0) continue;
        const auto& nd = tree.nodes[node];
        int child = x(static_cast<Eigen::Index>(i), nd.feature) <= nd.threshold ? nd.left : nd.right;
        node_of[i] = child;
        auto& st = next_stat[static_cast<std::size_t>(child_slot[child])];
        st.g += g[i];
        st.h += h[i];
      }
      // Leaf statistics for nodes that did not split stay in `stat`.
      for (std::size_t s = 0; s < frontier.size(); ++s)
        if (tree.nodes[frontier[s]].feature < 0)
          tree.nodes[frontier[s]].value = leaf_weight(stat[s].g, stat[s].h, o) * o.learning_rate;
      frontier = std::move(next);
      stat = std::move(next_stat);
    }
    for (std::size_t s = 0; s < frontier.size(); ++s)
      tree.nodes[frontier[s]].value = leaf_weight(stat[s].g, stat[s].h, o) * o.learning_rate;
    return tree;
  }

  static BoostedTreesModel fit(const Matrix& x, const std::vector<std::uint8_t>& labels,
                               const Options& o, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(x.rows());
    BoostedTreesModel m;
    const auto order = presort(x);
    std::vector<double> margin(n, m.base_margin), g(n), h(n);
    std::vector<std::uint8_t> in_sample(n, 1);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution take(o.subsample);
    for (long round = 0; round < o.rounds; ++round) {
      for (std::size_t i = 0; i < n; ++i) {
        double p = sigmoid(margin[i]);
        g[i] = p - labels[i];
        h[i] = std::max(p * (1 - p), 1e-16);
      }
      if (o.subsample < 1.0)
        for (auto& s : in_sample) s = take(rng) ? 1 : 0;
      DecisionTree tree = grow_tree(x, g, h, in_sample, order, o);
      double loss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        margin[i] += tree.predict(x.row(static_cast<Eigen::Index>(i)).data());
        loss += logistic_loss(margin[i], labels[i]);
      }
      loss /= static_cast<double>(n);
      if (!std::isfinite(loss)) throw TrainingDivergedError(static_cast<int>(round), "XGB: non-finite training loss");
      m.training_loss.push_back(loss);
      m.trees.push_back(std::move(tree));
    }
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& tree : trees) t.push_back(tree.to_json());
    return {{"base_margin", base_margin}, {"trees", t}, {"training_loss", training_loss}};
  }
  static BoostedTreesModel from_json(const nlohmann::json& j) {
    BoostedTreesModel m;
    m.base_margin = j.at("base_margin").get<double>();
    for (const auto& t : j.at("trees")) m.trees.push_back(DecisionTree::from_json(t));
    m.training_loss = j.at("training_loss").get<std::vector<double>>();
    return m;
  }
};

}  // namespace clinpred
