#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

struct TrainConfig {
  std::size_t epochs = 0;
  std::size_t batch_size = 128;
  // (first epoch, rate) pairs, ascending by epoch; the last entry at or
  // before the current epoch is in force.
  std::vector<std::pair<std::size_t, double>> lr_schedule = {{0, 0.1}};
  std::size_t pretrain_epochs = 0;
  std::uint64_t rng_seed = 0;
};

inline double schedule_rate(
    const std::vector<std::pair<std::size_t, double>>& schedule,
    std::size_t epoch) {
  if (schedule.empty()) {
    throw std::invalid_argument("schedule_rate: empty schedule");
  }
  double rate = schedule.front().second;
  for (const auto& [start, value] : schedule) {
    if (start <= epoch) rate = value;
  }
  return rate;
}

// Mean cross-entropy of softmaxed logits against integer labels.
inline double softmax_cross_entropy(const Matrix& logits,
                                    const std::vector<int>& labels) {
  if (logits.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("softmax_cross_entropy: bad labels");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* row = logits.row(r);
    double peak = row[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      peak = std::max(peak, row[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      sum += std::exp(row[c] - peak);
    }
    int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    }
    total += peak + std::log(sum) - row[y];
  }
  return total / static_cast<double>(logits.rows());
}

// d(mean cross-entropy)/d(logits) = (softmax - onehot) / batch.
inline Matrix softmax_cross_entropy_grad(const Matrix& logits,
                                         const std::vector<int>& labels) {
  Matrix grad(logits.rows(), logits.cols());
  double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* row = logits.row(r);
    double* grow = grad.row(r);
    double peak = row[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      peak = std::max(peak, row[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      grow[c] = std::exp(row[c] - peak);
      sum += grow[c];
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      grow[c] = grow[c] / sum * inv_n;
    }
    grow[labels[r]] -= inv_n;
  }
  return grad;
}

struct LayerGrads {
  Matrix weights;  // dense: weight grad; bottleneck: factor grad
  std::vector<double> bias;
};

struct Gradients {
  double loss = 0.0;
  std::vector<LayerGrads> layers;
  Matrix input;  // d loss / d x
};

// Extra gradient added to d loss / d activations[tap] before the chain
// continues below the tap.
struct TapGrad {
  std::size_t tap = 0;
  Matrix grad;
};

namespace detail {

inline Gradients backward_pass(const Network& net, const Matrix& x,
                               const ForwardTrace& trace, Matrix upstream,
                               std::span<const TapGrad> taps) {
  Gradients grads;
  grads.layers.resize(net.layers.size());
  Matrix d = std::move(upstream);
  for (std::size_t idx = net.layers.size(); idx-- > 0;) {
    for (const TapGrad& tap : taps) {
      if (tap.tap == idx) {
        if (!tap.grad.same_shape(trace.activations[idx])) {
          throw std::invalid_argument("backward: tap gradient shape mismatch");
        }
        add_in_place(d, tap.grad);
      }
    }
    const Matrix& input = idx == 0 ? x : trace.activations[idx - 1];
    if (const auto* dense = std::get_if<DenseLayer>(&net.layers[idx])) {
      Matrix dpre = std::move(d);
      if (dense->activation == Activation::relu) {
        const Matrix& post = trace.activations[idx];
        for (std::size_t i = 0; i < dpre.size(); ++i) {
          if (post.data()[i] <= 0.0) dpre.data()[i] = 0.0;
        }
      }
      grads.layers[idx].weights = multiply_at_b(dpre, input);
      grads.layers[idx].bias.assign(dpre.cols(), 0.0);
      for (std::size_t r = 0; r < dpre.rows(); ++r) {
        const double* row = dpre.row(r);
        for (std::size_t c = 0; c < dpre.cols(); ++c) {
          grads.layers[idx].bias[c] += row[c];
        }
      }
      d = multiply(dpre, dense->weights);
    } else {
      const auto& bottleneck = std::get<BottleneckLayer>(net.layers[idx]);
      Matrix df = multiply(d, bottleneck.factor);
      Matrix xf = multiply(input, bottleneck.factor);
      grads.layers[idx].weights =
          add(multiply_at_b(input, df), multiply_at_b(d, xf));
      d = multiply_a_bt(df, bottleneck.factor);
    }
  }
  grads.input = std::move(d);
  return grads;
}

}  // namespace detail

inline Gradients loss_and_grads_taps(const Network& net, const Matrix& x,
                                     const std::vector<int>& labels,
                                     std::span<const TapGrad> taps) {
  validate(net);
  if (x.rows() == 0) {
    throw std::invalid_argument("loss_and_grads: empty batch");
  }
  ForwardTrace trace = forward_with_taps(net, x);
  Matrix dlogits = softmax_cross_entropy_grad(trace.logits(), labels);
  Gradients grads = detail::backward_pass(net, x, trace, std::move(dlogits), taps);
  grads.loss = softmax_cross_entropy(trace.logits(), labels);
  return grads;
}

inline Gradients loss_and_grads(const Network& net, const Matrix& x,
                                const std::vector<int>& labels,
                                const Matrix* extra_activation_grad = nullptr) {
  std::vector<TapGrad> taps;
  if (extra_activation_grad != nullptr) {
    taps.push_back({net.tap_index, *extra_activation_grad});
  }
  return loss_and_grads_taps(net, x, labels, taps);
}

// Gradient of the mean cross-entropy with respect to the input row.
inline std::vector<double> input_gradient(const Network& net,
                                          const std::vector<double>& x,
                                          int label) {
  Matrix xm(1, x.size());
  xm.set_row(0, x);
  Gradients grads = loss_and_grads(net, xm, {label});
  return grads.input.row_copy(0);
}

// Rows are d logit_c / d x for each class c.
inline Matrix logit_jacobian(const Network& net, const std::vector<double>& x) {
  Matrix xm(1, x.size());
  xm.set_row(0, x);
  ForwardTrace trace = forward_with_taps(net, xm);
  std::size_t k = net.class_count;
  Matrix jac(k, x.size());
  for (std::size_t c = 0; c < k; ++c) {
    Matrix seed(1, k);
    seed(0, c) = 1.0;
    Gradients grads = detail::backward_pass(net, xm, trace, std::move(seed), {});
    for (std::size_t j = 0; j < x.size(); ++j) jac(c, j) = grads.input(0, j);
  }
  return jac;
}

// Per-batch callback attached to one tap. Receives the tap activations and
// the schedule rate in force, updates any state it owns, and returns the
// additive gradient to inject at the tap.
struct TapHook {
  std::size_t tap = 0;
  std::function<Matrix(const Matrix& activations, double rate)> fn;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Plain minibatch SGD with per-epoch shuffling. Hooks fire after
// pretrain_epochs; their returned gradients join the backward pass at their
// taps. History holds per-epoch mean batch loss and training accuracy.
inline std::vector<EpochStats> sgd_train(Network& net, const Matrix& x,
                                         const std::vector<int>& labels,
                                         const TrainConfig& cfg,
                                         const std::vector<TapHook>& hooks = {}) {
  validate(net);
  if (x.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("sgd_train: features and labels disagree");
  }
  if (cfg.batch_size == 0) {
    throw std::invalid_argument("sgd_train: batch_size must be positive");
  }
  for (const TapHook& hook : hooks) {
    if (hook.tap >= net.layers.size() || !hook.fn) {
      throw std::invalid_argument("sgd_train: bad hook");
    }
  }

  std::size_t n = x.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(cfg.rng_seed);
  std::vector<EpochStats> history;
  history.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double rate = schedule_rate(cfg.lr_schedule, epoch);
    bool hooks_active = !hooks.empty() && epoch >= cfg.pretrain_epochs;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::size_t count = std::min(cfg.batch_size, n - start);
      Matrix xb(count, x.cols());
      std::vector<int> yb(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::size_t src = order[start + i];
        const double* row = x.row(src);
        std::copy(row, row + x.cols(), xb.row(i));
        yb[i] = labels[src];
      }

      ForwardTrace trace = forward_with_taps(net, xb);
      std::vector<TapGrad> taps;
      if (hooks_active) {
        taps.reserve(hooks.size());
        for (const TapHook& hook : hooks) {
          taps.push_back({hook.tap, hook.fn(trace.activations[hook.tap], rate)});
        }
      }
      Matrix dlogits = softmax_cross_entropy_grad(trace.logits(), yb);
      Gradients grads =
          detail::backward_pass(net, xb, trace, std::move(dlogits), taps);

      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (auto* dense = std::get_if<DenseLayer>(&net.layers[i])) {
          axpy(dense->weights, -rate, grads.layers[i].weights);
          for (std::size_t c = 0; c < dense->bias.size(); ++c) {
            dense->bias[c] -= rate * grads.layers[i].bias[c];
          }
        } else {
          auto& bottleneck = std::get<BottleneckLayer>(net.layers[i]);
          axpy(bottleneck.factor, -rate, grads.layers[i].weights);
        }
      }

      loss_sum += softmax_cross_entropy(trace.logits(), yb) *
                  static_cast<double>(count);
      std::vector<int> got = predict_labels(trace.logits());
      for (std::size_t i = 0; i < count; ++i) {
        if (got[i] == yb[i]) ++correct;
      }
    }
    history.push_back({loss_sum / static_cast<double>(n),
                       static_cast<double>(correct) / static_cast<double>(n)});
  }
  return history;
}

// Max relative error between analytic parameter gradients and central
// differences. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Inputs near relu kinks are the caller's responsibility.
inline double finite_diff_check(const Network& net, const Matrix& x,
                                const std::vector<int>& labels,
                                double h = 1e-6) {
  Gradients grads = loss_and_grads(net, x, labels);
  Network probe = net;
  double worst = 0.0;

  auto probe_param = [&](double* value, double analytic) {
    double saved = *value;
    *value = saved + h;
    double up = softmax_cross_entropy(forward_with_taps(probe, x).logits(), labels);
    *value = saved - h;
    double down =
        softmax_cross_entropy(forward_with_taps(probe, x).logits(), labels);
    *value = saved;
    double numeric = (up - down) / (2.0 * h);
    double rel = std::abs(analytic - numeric) /
                 std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  };

  for (std::size_t i = 0; i < probe.layers.size(); ++i) {
    if (auto* dense = std::get_if<DenseLayer>(&probe.layers[i])) {
      for (std::size_t j = 0; j < dense->weights.size(); ++j) {
        probe_param(&dense->weights.data()[j],
                    grads.layers[i].weights.data()[j]);
      }
      for (std::size_t j = 0; j < dense->bias.size(); ++j) {
        probe_param(&dense->bias[j], grads.layers[i].bias[j]);
      }
    } else {
      auto* bottleneck = std::get_if<BottleneckLayer>(&probe.layers[i]);
      for (std::size_t j = 0; j < bottleneck->factor.size(); ++j) {
        probe_param(&bottleneck->factor.data()[j],
                    grads.layers[i].weights.data()[j]);
      }
    }
  }
  return worst;
}

}  // namespace lowrank
