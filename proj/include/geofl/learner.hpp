#pragma once

// Two-layer MLP (ReLU hidden layer, softmax cross-entropy) with minibatch SGD.
//
// Parameter layout in ModelParams::values, all row-major:
//   W1 [hidden x input], b1 [hidden], W2 [output x hidden], b2 [output]
// Bias blocks are absent when the architecture has with_bias = false.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geofl/errors.hpp"
#include "geofl/rng.hpp"

namespace geofl {

struct MlpArchitecture {
  std::size_t input_dim = 784;
  std::size_t hidden_dim = 200;
  std::size_t output_dim = 10;
  bool with_bias = true;

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
      throw ConfigError("MLP dimensions must all be at least 1");
    }
  }

  [[nodiscard]] std::size_t w1_offset() const noexcept { return 0; }
  [[nodiscard]] std::size_t b1_offset() const noexcept { return hidden_dim * input_dim; }
  [[nodiscard]] std::size_t w2_offset() const noexcept {
    return b1_offset() + (with_bias ? hidden_dim : 0);
  }
  [[nodiscard]] std::size_t b2_offset() const noexcept {
    return w2_offset() + output_dim * hidden_dim;
  }
  [[nodiscard]] std::size_t param_count() const noexcept {
    return b2_offset() + (with_bias ? output_dim : 0);
  }
};

template <class Real = double>
struct ModelParams {
  MlpArchitecture arch;
  std::vector<Real> values;

  ModelParams() = default;
  explicit ModelParams(const MlpArchitecture& a) : arch(a), values(a.param_count(), Real{0}) {}

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
};

struct TrainSpec {
  double learning_rate = 0.001;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;

  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be finite and non-negative");
    }
    if (local_epochs < 1) throw ConfigError("local_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  }
};

/// Dense row-major feature matrix with one class label per row.
template <class Real = double>
struct LabeledSamples {
  std::size_t cols = 0;
  std::vector<Real> values;
  std::vector<int> labels;

  [[nodiscard]] std::size_t rows() const noexcept { return labels.size(); }
  [[nodiscard]] std::span<const Real> row(std::size_t i) const noexcept {
    return {values.data() + i * cols, cols};
  }
  void push_back(std::span<const Real> x, int label) {
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(label);
  }
};

/// One client's local data: a list of rows into a shared sample store.
/// Rows may repeat; two clients may reference the same row.
template <class Real = double>
class ClientDataset {
 public:
  ClientDataset() = default;
  ClientDataset(std::shared_ptr<const LabeledSamples<Real>> source, std::vector<std::size_t> rows)
      : source_(std::move(source)), rows_(std::move(rows)) {}

  /// Every row of `samples`, in order.
  static ClientDataset whole(std::shared_ptr<const LabeledSamples<Real>> samples) {
    std::vector<std::size_t> rows(samples->rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return ClientDataset(std::move(samples), std::move(rows));
  }

  [[nodiscard]] std::size_t size() const noexcept { return rows_.size(); }
  [[nodiscard]] bool empty() const noexcept { return rows_.empty(); }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return source_ ? source_->cols : 0; }
  [[nodiscard]] std::span<const Real> features(std::size_t i) const noexcept {
    return source_->row(rows_[i]);
  }
  [[nodiscard]] int label(std::size_t i) const noexcept { return source_->labels[rows_[i]]; }
  [[nodiscard]] const std::vector<std::size_t>& rows() const noexcept { return rows_; }
  [[nodiscard]] const std::shared_ptr<const LabeledSamples<Real>>& source() const noexcept {
    return source_;
  }

 private:
  std::shared_ptr<const LabeledSamples<Real>> source_;
  std::vector<std::size_t> rows_;
};

/// Glorot-uniform weights, zero biases.
template <class Real = double>
ModelParams<Real> init_params(const MlpArchitecture& arch, RandomStream& rng) {
  arch.validate();
  ModelParams<Real> p(arch);
  auto fill = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) p.values[offset + i] = static_cast<Real>(u(rng));
  };
  fill(arch.w1_offset(), arch.input_dim, arch.hidden_dim);
  fill(arch.w2_offset(), arch.hidden_dim, arch.output_dim);
  return p;
}

template <class Real = double>
struct LossGrad {
  double loss = 0.0;
  std::vector<Real> grad;
};

template <class Real = double>
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <class Real = double>
struct LocalResult {
  ModelParams<Real> params;
  bool skipped = false;  // no local data; params returned unchanged
};

/// Forward/backward engine with reusable scratch buffers. One instance per
/// thread; the methods never touch shared state.
template <class Real = double>
class Mlp {
 public:
  explicit Mlp(const MlpArchitecture& arch)
      : arch_(arch), hidden_(arch.hidden_dim), logits_(arch.output_dim),
        dlogits_(arch.output_dim), dhidden_(arch.hidden_dim) {
    arch_.validate();
  }

  [[nodiscard]] const MlpArchitecture& arch() const noexcept { return arch_; }

  /// Logits for one sample; returns the per-sample cross-entropy against `label`.
  double forward(std::span<const Real> w, std::span<const Real> x, int label) {
    const std::size_t in = arch_.input_dim;
    const std::size_t hid = arch_.hidden_dim;
    const std::size_t out = arch_.output_dim;
    const Real* w1 = w.data() + arch_.w1_offset();
    const Real* w2 = w.data() + arch_.w2_offset();
    for (std::size_t h = 0; h < hid; ++h) {
      const Real* row = w1 + h * in;
      Real s = arch_.with_bias ? w[arch_.b1_offset() + h] : Real{0};
      for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
      hidden_[h] = s > Real{0} ? s : Real{0};
    }
    for (std::size_t o = 0; o < out; ++o) {
      const Real* row = w2 + o * hid;
      Real s = arch_.with_bias ? w[arch_.b2_offset() + o] : Real{0};
      for (std::size_t h = 0; h < hid; ++h) s += row[h] * hidden_[h];
      logits_[o] = s;
    }
    // Stable log-sum-exp.
    const double m = static_cast<double>(*std::max_element(logits_.begin(), logits_.end()));
    double z = 0.0;
    for (std::size_t o = 0; o < out; ++o) z += std::exp(static_cast<double>(logits_[o]) - m);
    lse_ = m + std::log(z);
    return lse_ - static_cast<double>(logits_[static_cast<std::size_t>(label)]);
  }

  /// Argmax of the last forward pass, lowest class index on ties.
  [[nodiscard]] int predicted() const noexcept {
    return static_cast<int>(std::max_element(logits_.begin(), logits_.end()) - logits_.begin());
  }

  /// Adds scale * d(loss)/d(w) for the last forward pass into grad.
  void backward(std::span<const Real> w, std::span<const Real> x, int label, Real scale,
                std::span<Real> grad) {
    const std::size_t in = arch_.input_dim;
    const std::size_t hid = arch_.hidden_dim;
    const std::size_t out = arch_.output_dim;
    const Real* w2 = w.data() + arch_.w2_offset();
    for (std::size_t o = 0; o < out; ++o) {
      const double p = std::exp(static_cast<double>(logits_[o]) - lse_);
      dlogits_[o] = static_cast<Real>((p - (static_cast<int>(o) == label ? 1.0 : 0.0))) * scale;
    }
    Real* gw2 = grad.data() + arch_.w2_offset();
    std::fill(dhidden_.begin(), dhidden_.end(), Real{0});
    for (std::size_t o = 0; o < out; ++o) {
      const Real d = dlogits_[o];
      Real* grow = gw2 + o * hid;
      const Real* wrow = w2 + o * hid;
      for (std::size_t h = 0; h < hid; ++h) {
        grow[h] += d * hidden_[h];
        dhidden_[h] += d * wrow[h];
      }
      if (arch_.with_bias) grad[arch_.b2_offset() + o] += d;
    }
    Real* gw1 = grad.data() + arch_.w1_offset();
    for (std::size_t h = 0; h < hid; ++h) {
      if (!(hidden_[h] > Real{0})) continue;  // ReLU gate
      const Real d = dhidden_[h];
      Real* grow = gw1 + h * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * x[i];
      if (arch_.with_bias) grad[arch_.b1_offset() + h] += d;
    }
  }

 private:
  MlpArchitecture arch_;
  std::vector<Real> hidden_;
  std::vector<Real> logits_;
  std::vector<Real> dlogits_;
  std::vector<Real> dhidden_;
  double lse_ = 0.0;
};

namespace detail {

template <class Real>
void check_compatible(const ModelParams<Real>& params, const ClientDataset<Real>& data) {
  if (params.values.size() != params.arch.param_count()) {
    throw ConfigError("parameter vector length does not match architecture");
  }
  if (data.feature_dim() != params.arch.input_dim) {
    throw ConfigError("feature dimension " + std::to_string(data.feature_dim()) +
                      " does not match MLP input " + std::to_string(params.arch.input_dim));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data.label(i);
    if (y < 0 || static_cast<std::size_t>(y) >= params.arch.output_dim) {
      throw ConfigError("label " + std::to_string(y) + " outside the MLP output range");
    }
  }
}

// Mean loss and gradient over data rows `batch` (positions within data).
template <class Real>
double batch_loss_grad(Mlp<Real>& net, std::span<const Real> w, const ClientDataset<Real>& data,
                       std::span<const std::size_t> batch, std::span<Real> grad) {
  std::fill(grad.begin(), grad.end(), Real{0});
  const Real scale = Real{1} / static_cast<Real>(batch.size());
  double loss = 0.0;
  for (const std::size_t i : batch) {
    const auto x = data.features(i);
    const int y = data.label(i);
    loss += net.forward(w, x, y);
    net.backward(w, x, y, scale, grad);
  }
  return loss / static_cast<double>(batch.size());
}

}  // namespace detail

/// Mean cross-entropy over the rows `batch` of `data` and its exact gradient.
template <class Real>
LossGrad<Real> loss_and_grad(const ModelParams<Real>& params, const ClientDataset<Real>& data,
                             std::span<const std::size_t> batch) {
  detail::check_compatible(params, data);
  if (batch.empty()) throw ConfigError("loss_and_grad: empty batch");
  Mlp<Real> net(params.arch);
  LossGrad<Real> out;
  out.grad.assign(params.size(), Real{0});
  out.loss = detail::batch_loss_grad<Real>(net, params.values, data, batch, out.grad);
  return out;
}

template <class Real>
LossGrad<Real> loss_and_grad(const ModelParams<Real>& params, const ClientDataset<Real>& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_grad(params, data, std::span<const std::size_t>(all));
}

/// E epochs of shuffled minibatch SGD. The final short batch is kept and
/// averaged over its actual size.
template <class Real>
LocalResult<Real> local_train(const ModelParams<Real>& params, const ClientDataset<Real>& data,
                              const TrainSpec& spec, RandomStream& rng) {
  spec.validate();
  LocalResult<Real> result{params, false};
  if (data.empty()) {
    result.skipped = true;
    return result;
  }
  detail::check_compatible(params, data);

  Mlp<Real> net(params.arch);
  std::vector<Real> grad(params.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto eta = static_cast<Real>(spec.learning_rate);
  auto& w = result.params.values;

  for (std::size_t epoch = 0; epoch < spec.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t len = std::min(spec.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      detail::batch_loss_grad<Real>(net, w, data, batch, grad);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * grad[i];
    }
  }
  return result;
}

/// Mean loss and accuracy over the whole dataset. Ties in argmax resolve to
/// the lowest class index.
template <class Real>
Evaluation<Real> evaluate(const ModelParams<Real>& params, const ClientDataset<Real>& data) {
  detail::check_compatible(params, data);
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  Mlp<Real> net(params.arch);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    loss += net.forward(params.values, data.features(i), data.label(i));
    if (net.predicted() == data.label(i)) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace geofl
