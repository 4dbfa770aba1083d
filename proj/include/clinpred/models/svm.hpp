#pragma once

// Soft-margin kernel SVM trained by sequential minimal optimization with
// second-order working-set selection, followed by a Platt sigmoid fitted on
// validation decision values.

#include <cmath>
#include <list>
#include <unordered_map>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/models/logistic.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

enum class KernelType { polynomial, rbf, sigmoid };

inline KernelType parse_kernel(const std::string& s) {
  if (s == "polynomial") return KernelType::polynomial;
  if (s == "rbf") return KernelType::rbf;
  if (s == "sigmoid") return KernelType::sigmoid;
  throw ConfigError("unknown kernel '" + s + "'");
}

inline std::string to_string(KernelType k) {
  switch (k) {
    case KernelType::polynomial: return "polynomial";
    case KernelType::rbf: return "rbf";
    case KernelType::sigmoid: return "sigmoid";
  }
  return "?";
}

struct Kernel {
  KernelType type = KernelType::rbf;
  double gamma = 1.0;
  double coef0 = 0.0;
  int degree = 3;

  // From a dot product and the two squared norms.
  double from_dot(double dot, double sq_a, double sq_b) const {
    switch (type) {
      case KernelType::polynomial: return std::pow(gamma * dot + coef0, degree);
      case KernelType::rbf: return std::exp(-gamma * std::max(sq_a + sq_b - 2 * dot, 0.0));
      case KernelType::sigmoid: return std::tanh(gamma * dot + coef0);
    }
    return 0;
  }

  double operator()(const double* a, const double* b, Eigen::Index d) const {
    double dot = 0, sa = 0, sb = 0;
    for (Eigen::Index k = 0; k < d; ++k) {
      dot += a[k] * b[k];
      sa += a[k] * a[k];
      sb += b[k] * b[k];
    }
    return from_dot(dot, sa, sb);
  }

  // 1 / (n_features * Var(X)) over all entries, or 1 / n_features if X is constant.
  static double scale_gamma(const Matrix& x) {
    const double n = static_cast<double>(x.size());
    double mean = x.sum() / n;
    double var = (x.array() - mean).square().sum() / n;
    const double d = static_cast<double>(x.cols());
    return var > 0 ? 1.0 / (d * var) : 1.0 / d;
  }
};

// Q-matrix rows Q_ij = y_i y_j K(x_i, x_j), computed on demand and kept in
// an LRU cache bounded by `capacity` rows.
class KernelRowCache {
 public:
  KernelRowCache(const Matrix& x, const std::vector<double>& y, const Kernel& k, std::size_t capacity)
      : x_(x), y_(y), kernel_(k), capacity_(std::max<std::size_t>(capacity, 2)) {
    sq_norm_ = x.rowwise().squaredNorm();
  }

  const std::vector<double>& row(std::size_t i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    const auto n = x_.rows();
    Vector dots = x_ * x_.row(static_cast<Eigen::Index>(i)).transpose();
    std::vector<double> q(static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < n; ++t)
      q[t] = y_[i] * y_[t] * kernel_.from_dot(dots[t], sq_norm_[i], sq_norm_[t]);
    lru_.emplace_front(i, std::move(q));
    index_[i] = lru_.begin();
    ++computed_;
    return lru_.front().second;
  }

  double diagonal(std::size_t i) const {
    return kernel_.from_dot(sq_norm_[i], sq_norm_[i], sq_norm_[i]);
  }
  std::size_t rows_computed() const { return computed_; }

 private:
  const Matrix& x_;
  const std::vector<double>& y_;
  Kernel kernel_;
  std::size_t capacity_;
  Vector sq_norm_;
  std::list<std::pair<std::size_t, std::vector<double>>> lru_;
  std::unordered_map<std::size_t, decltype(lru_)::iterator> index_;
  std::size_t computed_ = 0;
};

struct SmoResult {
  std::vector<double> alpha;
  double rho = 0;  // decision = sum alpha_i y_i K(x_i, x) - rho
  long iterations = 0;
  bool converged = false;
};

struct SmoOptions {
  double C = 1.0;
  double tolerance = 1e-3;
  long max_iterations = 100000;
  std::size_t cache_bytes = std::size_t{256} << 20;
};

// Solves min 1/2 a'Qa - e'a  s.t. 0 <= a <= C, y'a = 0 (labels in {-1,+1}).
inline SmoResult solve_smo(const Matrix& x, const std::vector<double>& y, const Kernel& kernel,
                           const SmoOptions& opt) {
  const auto n = static_cast<std::size_t>(x.rows());
  const double C = opt.C;
  constexpr double tau = 1e-12;
  KernelRowCache cache(x, y, kernel, opt.cache_bytes / (sizeof(double) * std::max<std::size_t>(n, 1)));
  std::vector<double> qd(n), grad(n, -1.0), alpha(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) qd[i] = cache.diagonal(i);

  auto is_upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto is_lower = [&](std::size_t t) { return alpha[t] <= 0; };

  SmoResult res;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    double gmax = -INFINITY, gmax2 = -INFINITY;
    long ii = -1, jj = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] > 0) {
        if (!is_upper(t) && -grad[t] >= gmax) { gmax = -grad[t]; ii = static_cast<long>(t); }
      } else {
        if (!is_lower(t) && grad[t] >= gmax) { gmax = grad[t]; ii = static_cast<long>(t); }
      }
    }
    if (ii < 0) {
      res.converged = true;
      break;
    }
    const auto i = static_cast<std::size_t>(ii);
    const std::vector<double>& qi = cache.row(i);
    double obj_min = INFINITY;
    for (std::size_t t = 0; t < n; ++t) {
      double diff, quad;
      if (y[t] > 0) {
        if (is_lower(t)) continue;
        diff = gmax + grad[t];
        gmax2 = std::max(gmax2, grad[t]);
        quad = qd[i] + qd[t] - 2.0 * y[i] * qi[t];
      } else {
        if (is_upper(t)) continue;
        diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
        quad = qd[i] + qd[t] + 2.0 * y[i] * qi[t];
      }
      if (diff > 0) {
        double obj = -(diff * diff) / (quad > 0 ? quad : tau);
        if (obj <= obj_min) {
          obj_min = obj;
          jj = static_cast<long>(t);
        }
      }
    }
    if (gmax + gmax2 < opt.tolerance || jj < 0) {
      res.converged = true;
      break;
    }
    const auto j = static_cast<std::size_t>(jj);
    const std::vector<double> qi_copy = qi;  // row(j) may evict row(i)
    const std::vector<double>& qj = cache.row(j);
    const double old_i = alpha[i], old_j = alpha[j];

    if (y[i] != y[j]) {
      double quad = qd[i] + qd[j] + 2 * qi_copy[j];
      if (quad <= 0) quad = tau;
      double delta = (-grad[i] - grad[j]) / quad;
      double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = C - diff; }
      } else {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = C + diff; }
      }
    } else {
      double quad = qd[i] + qd[j] - 2 * qi_copy[j];
      if (quad <= 0) quad = tau;
      double delta = (grad[i] - grad[j]) / quad;
      double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = sum - C; }
      } else {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
      }
      if (sum > C) {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = sum - C; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    for (std::size_t t = 0; t < n; ++t) grad[t] += qi_copy[t] * di + qj[t] * dj;
    if (!std::isfinite(grad[i]) || !std::isfinite(grad[j]))
      throw TrainingDivergedError(static_cast<int>(res.iterations), "SVM: non-finite gradient");
  }

  // Offset from free vectors, or the midpoint of the feasible interval.
  double ub = INFINITY, lb = -INFINITY, sum_free = 0;
  long n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    double yg = y[t] * grad[t];
    if (is_upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (is_lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  res.rho = n_free > 0 ? sum_free / static_cast<double>(n_free)
                       : (std::isfinite(ub) && std::isfinite(lb) ? (ub + lb) / 2
                                                                 : (std::isfinite(ub) ? ub : lb));
  if (!std::isfinite(res.rho)) res.rho = 0;
  res.alpha = std::move(alpha);
  return res;
}

// Platt's sigmoid p = 1 / (1 + exp(A f + B)) by Newton's method with
// backtracking and smoothed targets.
struct PlattScaling {
  double a = -1.0, b = 0.0;

  double operator()(double f) const { return sigmoid(-(a * f + b)); }

  static PlattScaling fit(const std::vector<double>& dec, const std::vector<std::uint8_t>& labels,
                          int max_iterations = 100) {
    double prior1 = 0, prior0 = 0;
    for (auto l : labels) (l ? prior1 : prior0) += 1;
    const double hi = (prior1 + 1) / (prior1 + 2), lo = 1 / (prior0 + 2);
    const std::size_t n = dec.size();
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] ? hi : lo;
    auto objective = [&](double a, double b) {
      double f = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double z = dec[i] * a + b;
        f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
      }
      return f;
    };
    PlattScaling s;
    s.a = 0;
    s.b = std::log((prior0 + 1) / (prior1 + 1));
    double fval = objective(s.a, s.b);
    for (int it = 0; it < max_iterations; ++it) {
      double h11 = 1e-12, h22 = 1e-12, h21 = 0, g1 = 0, g2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double z = dec[i] * s.a + s.b;
        double p, q;
        if (z >= 0) {
          p = std::exp(-z) / (1 + std::exp(-z));
          q = 1 / (1 + std::exp(-z));
        } else {
          p = 1 / (1 + std::exp(z));
          q = std::exp(z) / (1 + std::exp(z));
        }
        double d2 = p * q;
        h11 += dec[i] * dec[i] * d2;
        h22 += d2;
        h21 += dec[i] * d2;
        double d1 = t[i] - p;
        g1 += dec[i] * d1;
        g2 += d1;
      }
      if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
      double det = h11 * h22 - h21 * h21;
      double da = -(h22 * g1 - h21 * g2) / det;
      double db = -(-h21 * g1 + h11 * g2) / det;
      double gd = g1 * da + g2 * db;
      double step = 1;
      while (step >= 1e-10) {
        double na = s.a + step * da, nb = s.b + step * db;
        double nf = objective(na, nb);
        if (nf < fval + 1e-4 * step * gd) {
          s.a = na;
          s.b = nb;
          fval = nf;
          break;
        }
        step /= 2;
      }
      if (step < 1e-10) break;
    }
    return s;
  }
};

struct SvmModel {
  struct Options {
    double C = 1.0;
    KernelType kernel = KernelType::rbf;
    int degree = 3;
    double tolerance = 1e-3;
    long max_iterations = 100000;
  };

  Kernel kernel;
  Matrix support_vectors;
  std::vector<double> coef;  // alpha_i * y_i
  double rho = 0;
  PlattScaling platt;
  long iterations = 0;
  bool converged = true;

  double decision_row(const double* row) const {
    double s = -rho;
    const Eigen::Index d = support_vectors.cols();
    for (Eigen::Index k = 0; k < support_vectors.rows(); ++k)
      s += coef[k] * kernel(support_vectors.row(k).data(), row, d);
    return s;
  }

  std::vector<double> decision(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = decision_row(x.row(i).data());
    return out;
  }

  std::vector<double> predict(const Matrix& x) const {
    auto out = decision(x);
    for (auto& v : out) v = platt(v);
    return out;
  }

  static SvmModel fit(const Matrix& x, const std::vector<std::uint8_t>& labels, const Matrix& x_val,
                      const std::vector<std::uint8_t>& val_labels, const Options& opt,
                      Warnings& warnings) {
    SvmModel m;
    m.kernel = {opt.kernel, Kernel::scale_gamma(x), 0.0, opt.degree};
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = labels[i] ? 1.0 : -1.0;
    auto res = solve_smo(x, y, m.kernel, {opt.C, opt.tolerance, opt.max_iterations});
    m.iterations = res.iterations;
    m.converged = res.converged;
    if (!res.converged)
      warnings.add("SVM: SMO stopped at the iteration cap (" + std::to_string(opt.max_iterations) +
                   ") before reaching tolerance");
    std::vector<Eigen::Index> sv;
    for (std::size_t i = 0; i < res.alpha.size(); ++i)
      if (res.alpha[i] > 0) sv.push_back(static_cast<Eigen::Index>(i));
    m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
    for (std::size_t k = 0; k < sv.size(); ++k) {
      m.support_vectors.row(static_cast<Eigen::Index>(k)) = x.row(sv[k]);
      m.coef.push_back(res.alpha[sv[k]] * y[sv[k]]);
    }
    m.rho = res.rho;
    m.platt = PlattScaling::fit(m.decision(x_val), val_labels);
    return m;
  }

  nlohmann::json to_json() const {
    return {{"kernel", to_string(kernel.type)},
            {"gamma", kernel.gamma},
            {"coef0", kernel.coef0},
            {"degree", kernel.degree},
            {"support_vectors", std::vector<double>(support_vectors.data(),
                                                    support_vectors.data() + support_vectors.size())},
            {"n_features", support_vectors.cols()},
            {"coef", coef},
            {"rho", rho},
            {"platt_a", platt.a},
            {"platt_b", platt.b},
            {"iterations", iterations},
            {"converged", converged}};
  }

  static SvmModel from_json(const nlohmann::json& j) {
    SvmModel m;
    m.kernel = {parse_kernel(j.at("kernel").get<std::string>()), j.at("gamma").get<double>(),
                j.at("coef0").get<double>(), j.at("degree").get<int>()};
    m.coef = j.at("coef").get<std::vector<double>>();
    auto sv = j.at("support_vectors").get<std::vector<double>>();
    auto d = j.at("n_features").get<Eigen::Index>();
    m.support_vectors = Eigen::Map<Matrix>(sv.data(), static_cast<Eigen::Index>(m.coef.size()), d);
    m.rho = j.at("rho").get<double>();
    m.platt = {j.at("platt_a").get<double>(), j.at("platt_b").get<double>()};
    m.iterations = j.at("iterations").get<long>();
    m.converged = j.at("converged").get<bool>();
    return m;
  }
};

}  // namespace clinpred
