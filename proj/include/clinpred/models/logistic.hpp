#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// -log p(y | z) for a logit z.
inline double logistic_loss(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

// Binary cross-entropy on probabilities, clipped away from 0 and 1.
inline double binary_cross_entropy(double p, double y, double eps = 1e-7) {
  p = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

inline double binary_cross_entropy(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += binary_cross_entropy(p[i], y[i]);
  return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

inline std::vector<double> to_double_labels(const std::vector<std::uint8_t>& y) {
  return {y.begin(), y.end()};
}

// L2-penalized logistic regression: minimizes
//   sum_i loss(b + w.x_i, y_i) + |w|^2 / (2 C)
// by Newton / IRLS with step halving. The intercept is not penalized.
struct LogisticModel {
  Vector weights;
  double intercept = 0;
  int iterations = 0;

  struct Options {
    double C = 1.0;
    int max_iterations = 100;
    double tolerance = 1e-8;
  };

  double logit(const double* row) const {
    double z = intercept;
    for (Eigen::Index j = 0; j < weights.size(); ++j) z += weights[j] * row[j];
    return z;
  }

  // Row-by-row so that a single record scores exactly like a batch row.
  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = sigmoid(logit(x.row(i).data()));
    return out;
  }

  static double objective(const Matrix& x, const std::vector<double>& y, const Vector& w,
                          double b, double lambda) {
    Vector z = (x * w).array() + b;
    double loss = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) loss += logistic_loss(z[i], y[i]);
    return loss + 0.5 * lambda * w.squaredNorm();
  }

  static LogisticModel fit(const Matrix& x, const std::vector<std::uint8_t>& labels,
                           const Options& opt) {
    const Eigen::Index n = x.rows(), d = x.cols();
    const double lambda = 1.0 / opt.C;
    const auto y = to_double_labels(labels);
    LogisticModel m;
    m.weights = Vector::Zero(d);

    Eigen::MatrixXd design(n, d + 1);
    design.col(0).setOnes();
    design.rightCols(d) = x;

    double obj = objective(x, y, m.weights, m.intercept, lambda);
    for (int it = 0; it < opt.max_iterations; ++it) {
      m.iterations = it + 1;
      Vector z = (x * m.weights).array() + m.intercept;
      Vector g(d + 1);
      Vector wts(n);
      Vector resid(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double p = sigmoid(z[i]);
        resid[i] = p - y[i];
        wts[i] = std::max(p * (1.0 - p), 1e-12);
      }
      g = design.transpose() * resid;
      g.tail(d) += lambda * m.weights;
      Eigen::MatrixXd h = design.transpose() * wts.asDiagonal() * design;
      h.diagonal().tail(d).array() += lambda;
      if (!g.allFinite() || !h.allFinite()) throw TrainingDivergedError(it, "LR: non-finite gradient");
      Vector step = h.ldlt().solve(g);

      double t = 1.0, next = obj;
      Vector w_new;
      double b_new = m.intercept;
      for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
        w_new = m.weights - t * step.tail(d);
        b_new = m.intercept - t * step[0];
        next = objective(x, y, w_new, b_new, lambda);
        if (std::isfinite(next) && next <= obj) break;
      }
      if (!std::isfinite(next)) throw TrainingDivergedError(it, "LR: non-finite loss");
      if (next > obj) break;  // no descent possible: at the optimum to working precision
      double change = obj - next;
      double max_step = t * step.cwiseAbs().maxCoeff();
      m.weights = w_new;
      m.intercept = b_new;
      obj = next;
      if (max_step < opt.tolerance || change <= opt.tolerance * std::max(1.0, std::abs(obj))) break;
    }
    return m;
  }

  nlohmann::json to_json() const {
    return {{"weights", std::vector<double>(weights.data(), weights.data() + weights.size())},
            {"intercept", intercept},
            {"iterations", iterations}};
  }
  static LogisticModel from_json(const nlohmann::json& j) {
    LogisticModel m;
    auto w = j.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.intercept = j.at("intercept").get<double>();
    m.iterations = j.at("iterations").get<int>();
    return m;
  }
};

}  // namespace clinpred
