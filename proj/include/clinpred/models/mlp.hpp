#pragma once

// Multilayer perceptron: [affine -> batch norm -> activation -> dropout] x L,
// then affine -> sigmoid. Trained with Adam on mean binary cross-entropy
// plus an L2 penalty on the affine weights, with early stopping on the
// validation loss.

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/models/logistic.hpp"
#include "clinpred/preprocess.hpp"
#include "json.hpp"

namespace clinpred {

enum class Activation { relu, selu, elu };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "selu") return Activation::selu;
  if (s == "elu") return Activation::elu;
  throw ConfigError("unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::selu: return "selu";
    case Activation::elu: return "elu";
  }
  return "?";
}

namespace detail {

inline constexpr double kSeluScale = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

inline double activate(Activation a, double v) {
  switch (a) {
    case Activation::relu: return v > 0 ? v : 0.0;
    case Activation::elu: return v > 0 ? v : std::expm1(v);
    case Activation::selu: return kSeluScale * (v > 0 ? v : kSeluAlpha * std::expm1(v));
  }
  return v;
}

inline double activate_grad(Activation a, double v) {
  switch (a) {
    case Activation::relu: return v > 0 ? 1.0 : 0.0;
    case Activation::elu: return v > 0 ? 1.0 : std::exp(v);
    case Activation::selu: return kSeluScale * (v > 0 ? 1.0 : kSeluAlpha * std::exp(v));
  }
  return 1.0;
}

}  // namespace detail

struct MlpModel {
  struct Options {
    long hidden_units = 32;
    long layers = 1;
    Activation activation = Activation::relu;
    long batch_size = 32;
    double l2 = 0.0;
    double learning_rate = 0.003;
    double dropout = 0.0;
    int max_epochs = 300;
    int patience = 12;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
  };

  // Flat parameter vector; per hidden layer l: W_l (in x out, column-major),
  // gamma_l, beta_l; then the output weights and bias.
  Vector theta;
  std::vector<Vector> running_mean, running_var;
  long input_dim = 0;
  long hidden_units = 0;
  long layers = 0;
  Activation activation = Activation::relu;
  double bn_epsilon = 1e-5;

  // Training record.
  int best_epoch = -1;
  int epochs_trained = 0;
  std::vector<double> validation_losses;

  // ---- parameter layout ----
  long layer_in(long l) const { return l == 0 ? input_dim : hidden_units; }
  Eigen::Index w_offset(long l) const {
    Eigen::Index off = 0;
    for (long k = 0; k < l; ++k) off += layer_in(k) * hidden_units + 2 * hidden_units;
    return off;
  }
  Eigen::Index out_offset() const { return w_offset(layers); }
  Eigen::Index n_params() const { return out_offset() + hidden_units + 1; }

  static MlpModel initialize(long input_dim, const Options& opt, std::mt19937_64& rng) {
    MlpModel m;
    m.input_dim = input_dim;
    m.hidden_units = opt.hidden_units;
    m.layers = opt.layers;
    m.activation = opt.activation;
    m.bn_epsilon = opt.bn_epsilon;
    m.theta = Vector::Zero(m.n_params());
    for (long l = 0; l < m.layers; ++l) {
      const long fan_in = m.layer_in(l);
      std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
      Eigen::Index off = m.w_offset(l);
      for (long k = 0; k < fan_in * m.hidden_units; ++k) m.theta[off + k] = u(rng);
      m.theta.segment(off + fan_in * m.hidden_units, m.hidden_units).setOnes();  // gamma
      m.running_mean.push_back(Vector::Zero(m.hidden_units));
      m.running_var.push_back(Vector::Ones(m.hidden_units));
    }
    const double lim = std::sqrt(6.0 / static_cast<double>(m.hidden_units + 1));
    std::uniform_real_distribution<double> u(-lim, lim);
    for (long k = 0; k < m.hidden_units; ++k) m.theta[m.out_offset() + k] = u(rng);
    return m;
  }

  // Per-batch statistics produced by a training-mode forward pass.
  struct BatchStats {
    std::vector<Vector> mean, var;
  };

  // Training-mode loss (batch statistics, given dropout masks) and its
  // gradient with respect to theta. masks[l] is B x H with entries 0 or
  // 1/(1-p); pass an empty vector for no dropout.
  double loss_and_gradient(const Vector& params, const Eigen::MatrixXd& x,
                           const std::vector<double>& y, double l2,
                           const std::vector<Eigen::MatrixXd>& masks, Vector* grad,
                           BatchStats* stats = nullptr) const {
    const Eigen::Index b = x.rows();
    const double inv_b = 1.0 / static_cast<double>(b);
    std::vector<Eigen::MatrixXd> inputs(layers + 1), normalized(layers), pre_act(layers);
    std::vector<Vector> inv_std(layers);
    inputs[0] = x;
    double penalty = 0;
    for (long l = 0; l < layers; ++l) {
      const long in = layer_in(l);
      Eigen::Index off = w_offset(l);
      Eigen::Map<const Eigen::MatrixXd> w(params.data() + off, in, hidden_units);
      Eigen::Map<const Vector> gamma(params.data() + off + in * hidden_units, hidden_units);
      Eigen::Map<const Vector> beta(params.data() + off + in * hidden_units + hidden_units,
                                    hidden_units);
      penalty += l2 * w.squaredNorm();
      Eigen::MatrixXd z = inputs[l] * w;
      Vector mu = z.colwise().mean();
      z.rowwise() -= mu.transpose();
      Vector var = z.colwise().squaredNorm() * inv_b;
      inv_std[l] = (var.array() + bn_epsilon).rsqrt();
      normalized[l] = z * inv_std[l].asDiagonal();
      pre_act[l] = (normalized[l] * gamma.asDiagonal()).rowwise() + beta.transpose();
      Eigen::MatrixXd h = pre_act[l].unaryExpr([&](double v) { return detail::activate(activation, v); });
      if (!masks.empty()) h.array() *= masks[l].array();
      inputs[l + 1] = std::move(h);
      if (stats) {
        stats->mean.push_back(mu);
        stats->var.push_back(var);
      }
    }
    Eigen::Map<const Vector> w_out(params.data() + out_offset(), hidden_units);
    const double b_out = params[out_offset() + hidden_units];
    penalty += l2 * w_out.squaredNorm();
    Vector logits = (inputs[layers] * w_out).array() + b_out;

    double loss = 0;
    Vector d_logits(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      loss += logistic_loss(logits[i], y[i]);
      d_logits[i] = (sigmoid(logits[i]) - y[i]) * inv_b;
    }
    loss = loss * inv_b + penalty;
    if (!grad) return loss;

    grad->setZero(params.size());
    grad->segment(out_offset(), hidden_units) = inputs[layers].transpose() * d_logits + 2 * l2 * w_out;
    (*grad)[out_offset() + hidden_units] = d_logits.sum();
    Eigen::MatrixXd d_input = d_logits * w_out.transpose();
    for (long l = layers - 1; l >= 0; --l) {
      const long in = layer_in(l);
      Eigen::Index off = w_offset(l);
      Eigen::Map<const Eigen::MatrixXd> w(params.data() + off, in, hidden_units);
      Eigen::Map<const Vector> gamma(params.data() + off + in * hidden_units, hidden_units);
      Eigen::MatrixXd d_h = d_input;
      if (!masks.empty()) d_h.array() *= masks[l].array();
      Eigen::MatrixXd d_pre = d_h.array() * pre_act[l].unaryExpr([&](double v) {
        return detail::activate_grad(activation, v);
      }).array();
      grad->segment(off + in * hidden_units, hidden_units) =
          (d_pre.array() * normalized[l].array()).colwise().sum().transpose();
      grad->segment(off + in * hidden_units + hidden_units, hidden_units) =
          d_pre.colwise().sum().transpose();
      Eigen::MatrixXd d_norm = d_pre * gamma.asDiagonal();
      Vector sum_d = d_norm.colwise().sum();
      Vector sum_dn = (d_norm.array() * normalized[l].array()).colwise().sum();
      Eigen::MatrixXd d_z = (d_norm * static_cast<double>(b)).rowwise() - sum_d.transpose();
      d_z -= normalized[l] * sum_dn.asDiagonal();
      d_z = d_z * (inv_std[l] * inv_b).asDiagonal();
      Eigen::MatrixXd d_w = inputs[l].transpose() * d_z + 2 * l2 * w;
      grad->segment(off, in * hidden_units) = Eigen::Map<const Vector>(d_w.data(), d_w.size());
      if (l > 0) d_input = d_z * w.transpose();
    }
    return loss;
  }

  // Inference-mode forward pass for a batch (running statistics, no dropout).
  Vector batch_logits(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd a = x;
    for (long l = 0; l < layers; ++l) {
      const long in = layer_in(l);
      Eigen::Index off = w_offset(l);
      Eigen::Map<const Eigen::MatrixXd> w(theta.data() + off, in, hidden_units);
      Eigen::Map<const Vector> gamma(theta.data() + off + in * hidden_units, hidden_units);
      Eigen::Map<const Vector> beta(theta.data() + off + in * hidden_units + hidden_units,
                                    hidden_units);
      Vector scale = gamma.array() * (running_var[l].array() + bn_epsilon).rsqrt();
      Vector shift = beta.array() - running_mean[l].array() * scale.array();
      Eigen::MatrixXd z = ((a * w) * scale.asDiagonal()).rowwise() + shift.transpose();
      a = z.unaryExpr([&](double v) { return detail::activate(activation, v); });
    }
    Eigen::Map<const Vector> w_out(theta.data() + out_offset(), hidden_units);
    return (a * w_out).array() + theta[out_offset() + hidden_units];
  }

  double row_logit(const double* row) const {
    std::vector<double> a(row, row + input_dim), next(static_cast<std::size_t>(hidden_units));
    for (long l = 0; l < layers; ++l) {
      const long in = layer_in(l);
      const Eigen::Index off = w_offset(l);
      const double* w = theta.data() + off;
      const double* gamma = w + in * hidden_units;
      const double* beta = gamma + hidden_units;
      for (long j = 0; j < hidden_units; ++j) {
        double z = 0;
        const double* col = w + j * in;
        for (long i = 0; i < in; ++i) z += a[i] * col[i];
        double zn = (z - running_mean[l][j]) / std::sqrt(running_var[l][j] + bn_epsilon);
        next[j] = detail::activate(activation, gamma[j] * zn + beta[j]);
      }
      a.assign(next.begin(), next.end());
    }
    const double* w_out = theta.data() + out_offset();
    double z = theta[out_offset() + hidden_units];
    for (long j = 0; j < hidden_units; ++j) z += a[j] * w_out[j];
    return z;
  }

  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = sigmoid(row_logit(x.row(i).data()));
    return out;
  }

  double validation_loss(const Matrix& x, const std::vector<double>& y) const {
    Vector logits = batch_logits(x);
    double loss = 0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) loss += logistic_loss(logits[i], y[i]);
    return loss / static_cast<double>(logits.size());
  }

  static MlpModel fit(const Matrix& x, const std::vector<std::uint8_t>& labels, const Matrix& x_val,
                      const std::vector<std::uint8_t>& val_labels, const Options& opt,
                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    MlpModel m = initialize(x.cols(), opt, rng);
    const auto y = to_double_labels(labels);
    const auto y_val = to_double_labels(val_labels);
    const Eigen::Index n = x.rows();

    // Adam state.
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-7;
    Vector m1 = Vector::Zero(m.theta.size()), m2 = Vector::Zero(m.theta.size());
    long step = 0;

    MlpModel best = m;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::bernoulli_distribution keep(1.0 - opt.dropout);
    const double keep_scale = opt.dropout < 1.0 ? 1.0 / (1.0 - opt.dropout) : 0.0;
    Vector grad;

    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n;) {
        Eigen::Index end = std::min<Eigen::Index>(start + opt.batch_size, n);
        if (n - end == 1) end = n;  // no singleton trailing batch
        const Eigen::Index bsz = end - start;
        Eigen::MatrixXd xb(bsz, x.cols());
        std::vector<double> yb(static_cast<std::size_t>(bsz));
        for (Eigen::Index r = 0; r < bsz; ++r) {
          xb.row(r) = x.row(order[start + r]);
          yb[r] = y[order[start + r]];
        }
        std::vector<Eigen::MatrixXd> masks;
        if (opt.dropout > 0) {
          for (long l = 0; l < m.layers; ++l) {
            Eigen::MatrixXd mask(bsz, m.hidden_units);
            for (Eigen::Index k = 0; k < mask.size(); ++k)
              mask.data()[k] = keep(rng) ? keep_scale : 0.0;
            masks.push_back(std::move(mask));
          }
        }
        BatchStats stats;
        double loss = m.loss_and_gradient(m.theta, xb, yb, opt.l2, masks, &grad, &stats);
        if (!std::isfinite(loss) || !grad.allFinite())
          throw TrainingDivergedError(epoch, "NN: non-finite training loss");
        ++step;
        m1 = beta1 * m1 + (1 - beta1) * grad;
        m2 = beta2 * m2 + (1 - beta2) * grad.cwiseProduct(grad);
        const double lr_t = opt.learning_rate * std::sqrt(1 - std::pow(beta2, step)) /
                            (1 - std::pow(beta1, step));
        m.theta.array() -= lr_t * m1.array() / (m2.array().sqrt() + eps);
        const double unbias = bsz > 1 ? static_cast<double>(bsz) / static_cast<double>(bsz - 1) : 1.0;
        for (long l = 0; l < m.layers; ++l) {
          m.running_mean[l] = (1 - opt.bn_momentum) * m.running_mean[l] + opt.bn_momentum * stats.mean[l];
          m.running_var[l] =
              (1 - opt.bn_momentum) * m.running_var[l] + opt.bn_momentum * unbias * stats.var[l];
        }
        start = end;
      }
      double val = m.validation_loss(x_val, y_val);
      if (!std::isfinite(val)) throw TrainingDivergedError(epoch, "NN: non-finite validation loss");
      m.validation_losses.push_back(val);
      m.epochs_trained = epoch + 1;
      if (val < best_loss) {
        best_loss = val;
        best = m;
        best.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= opt.patience) {
        break;
      }
    }
    best.validation_losses = m.validation_losses;
    best.epochs_trained = m.epochs_trained;
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["input_dim"] = input_dim;
    j["hidden_units"] = hidden_units;
    j["layers"] = layers;
    j["activation"] = to_string(activation);
    j["bn_epsilon"] = bn_epsilon;
    j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    for (long l = 0; l < layers; ++l) {
      j["running_mean"].push_back(std::vector<double>(running_mean[l].data(),
                                                      running_mean[l].data() + hidden_units));
      j["running_var"].push_back(std::vector<double>(running_var[l].data(),
                                                     running_var[l].data() + hidden_units));
    }
    j["best_epoch"] = best_epoch;
    j["epochs_trained"] = epochs_trained;
    j["validation_losses"] = validation_losses;
    return j;
  }

  static MlpModel from_json(const nlohmann::json& j) {
    MlpModel m;
    m.input_dim = j.at("input_dim").get<long>();
    m.hidden_units = j.at("hidden_units").get<long>();
    m.layers = j.at("layers").get<long>();
    m.activation = parse_activation(j.at("activation").get<std::string>());
    m.bn_epsilon = j.at("bn_epsilon").get<double>();
    auto t = j.at("theta").get<std::vector<double>>();
    m.theta = Eigen::Map<Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    if (m.theta.size() != m.n_params()) throw SchemaMismatchError("NN parameter count mismatch");
    for (long l = 0; l < m.layers; ++l) {
      auto mu = j.at("running_mean").at(l).get<std::vector<double>>();
      auto var = j.at("running_var").at(l).get<std::vector<double>>();
      m.running_mean.push_back(Eigen::Map<Vector>(mu.data(), static_cast<Eigen::Index>(mu.size())));
      m.running_var.push_back(Eigen::Map<Vector>(var.data(), static_cast<Eigen::Index>(var.size())));
    }
    m.best_epoch = j.at("best_epoch").get<int>();
    m.epochs_trained = j.at("epochs_trained").get<int>();
    m.validation_losses = j.at("validation_losses").get<std::vector<double>>();
    return m;
  }
};

}  // namespace clinpred
