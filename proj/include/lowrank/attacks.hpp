#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowrank/dataset.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/train.hpp"

namespace lowrank {

enum class AttackKind { iter_fsgm, iter_ll_fsgm, deepfool };

inline const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::iter_fsgm: return "iter-fsgm";
    case AttackKind::iter_ll_fsgm: return "iter-ll-fsgm";
    case AttackKind::deepfool: return "deepfool";
  }
  throw std::logic_error("attack_kind_name: bad enum");
}

inline AttackKind parse_attack_kind(const std::string& name) {
  if (name == "iter-fsgm") return AttackKind::iter_fsgm;
  if (name == "iter-ll-fsgm") return AttackKind::iter_ll_fsgm;
  if (name == "deepfool") return AttackKind::deepfool;
  throw std::invalid_argument("unknown attack kind: " + name);
}

enum class StopMode { fixed_iterations, until_misclassified };

struct AttackConfig {
  AttackKind kind = AttackKind::iter_fsgm;
  double epsilon = 0.03;  // L-inf budget; ignored by deepfool
  double alpha = 0.005;   // per-iteration step size
  std::size_t max_iters = 20;
  StopMode stop = StopMode::fixed_iterations;
  double overshoot = 0.02;  // deepfool boundary inflation
  double clip_lo = 0.0;
  double clip_hi = 1.0;
};

struct AttackResult {
  std::vector<double> x_adv;
  std::size_t iterations_used = 0;
  bool fooled = false;  // final prediction differs from the true label
  double rho = 0.0;     // ||x_adv - x||_2 / ||x||_2
  int clean_label = 0;  // model prediction on the clean input
  // Model prediction after each iteration; entry 0 is the clean prediction.
  std::vector<int> per_step_labels;
};

// Relative perturbation size of an adversarial example.
inline double perturbation_ratio(const std::vector<double>& clean,
                                 const std::vector<double>& adversarial) {
  if (clean.size() != adversarial.size()) {
    throw std::invalid_argument("perturbation_ratio: size mismatch");
  }
  double clean_norm = norm2(clean);
  if (clean_norm == 0.0) {
    throw std::invalid_argument("perturbation_ratio: clean input has zero norm");
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double d = adversarial[i] - clean[i];
    diff += d * d;
  }
  return std::sqrt(diff) / clean_norm;
}

inline int predict_one(const Network& net, const std::vector<double>& x) {
  Matrix xm(1, x.size());
  xm.set_row(0, x);
  return predict_labels(forward_with_taps(net, xm).logits())[0];
}

namespace detail {

inline std::vector<double> logits_one(const Network& net,
                                      const std::vector<double>& x) {
  Matrix xm(1, x.size());
  xm.set_row(0, x);
  return forward_with_taps(net, xm).logits().row_copy(0);
}

inline void check_attack_inputs(const Network& net,
                                const std::vector<double>& x, int label,
                                const AttackConfig& cfg) {
  if (x.size() != net.input_dim()) {
    throw std::invalid_argument("attack: input width does not match network");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= net.class_count) {
    throw std::invalid_argument("attack: label out of range");
  }
  if (cfg.epsilon < 0.0 || cfg.alpha <= 0.0 || cfg.clip_lo >= cfg.clip_hi) {
    throw std::invalid_argument("attack: bad config");
  }
}

inline void clip_step(std::vector<double>& x, const std::vector<double>& origin,
                      const AttackConfig& cfg, bool use_budget) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (use_budget) {
      x[i] = std::clamp(x[i], origin[i] - cfg.epsilon, origin[i] + cfg.epsilon);
    }
    x[i] = std::clamp(x[i], cfg.clip_lo, cfg.clip_hi);
  }
}

inline void finish_result(AttackResult& result, const std::vector<double>& x,
                          int label, const Network& net) {
  result.fooled = predict_one(net, result.x_adv) != label;
  double clean_norm = norm2(x);
  double diff = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = result.x_adv[i] - x[i];
    diff += d * d;
  }
  // Guarded denominator: an all-zero input is legal in rescaled data.
  result.rho = std::sqrt(diff) / std::max(clean_norm, 1e-12);
}

inline AttackResult fsgm_family(const Network& net, const std::vector<double>& x,
                                int label, const AttackConfig& cfg,
                                bool least_likely) {
  check_attack_inputs(net, x, label, cfg);
  AttackResult result;
  result.x_adv = x;
  result.clean_label = predict_one(net, x);
  result.per_step_labels = {result.clean_label};

  // The plain variant climbs the loss on the true label; the least-likely
  // variant descends the loss on the class the clean input rates lowest.
  int target = label;
  if (least_likely) {
    std::vector<double> logits = logits_one(net, x);
    target = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] < logits[target]) target = static_cast<int>(c);
    }
  }
  double direction = least_likely ? -1.0 : 1.0;

  int current = result.clean_label;
  for (std::size_t t = 0; t < cfg.max_iters; ++t) {
    if (cfg.stop == StopMode::until_misclassified && current != label) break;
    std::vector<double> grad = input_gradient(net, result.x_adv, target);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      result.x_adv[i] += direction * cfg.alpha * sign;
    }
    clip_step(result.x_adv, x, cfg, true);
    current = predict_one(net, result.x_adv);
    result.per_step_labels.push_back(current);
    ++result.iterations_used;
  }
  finish_result(result, x, label, net);
  return result;
}

inline AttackResult deepfool_attack(const Network& net,
                                    const std::vector<double>& x, int label,
                                    const AttackConfig& cfg) {
  check_attack_inputs(net, x, label, cfg);
  std::size_t d = x.size();
  AttackResult result;
  result.clean_label = predict_one(net, x);
  result.per_step_labels = {result.clean_label};

  std::vector<double> r_tot(d, 0.0);
  std::vector<double> x_cur = x;
  int current = result.clean_label;

  while (result.iterations_used < cfg.max_iters &&
         current == result.clean_label) {
    Matrix jac = logit_jacobian(net, x_cur);
    std::vector<double> logits = logits_one(net, x_cur);
    std::size_t clean = static_cast<std::size_t>(result.clean_label);

    // Nearest linearized class boundary.
    double best_ratio = 0.0;
    std::size_t best = net.class_count;
    for (std::size_t k = 0; k < net.class_count; ++k) {
      if (k == clean) continue;
      double wnorm_sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double w = jac(k, j) - jac(clean, j);
        wnorm_sq += w * w;
      }
      if (wnorm_sq < 1e-24) continue;
      double gap = std::abs(logits[k] - logits[clean]);
      double ratio = gap / std::sqrt(wnorm_sq);
      if (best == net.class_count || ratio < best_ratio) {
        best = k;
        best_ratio = ratio;
      }
    }
    if (best == net.class_count) break;  // every boundary is degenerate

    double wnorm_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double w = jac(best, j) - jac(clean, j);
      wnorm_sq += w * w;
    }
    double gap = std::abs(logits[best] - logits[clean]);
    for (std::size_t j = 0; j < d; ++j) {
      double w = jac(best, j) - jac(clean, j);
      r_tot[j] += (gap / wnorm_sq) * w;
    }
    // The overshoot applies while iterating, so a step that reaches a
    // boundary actually crosses it instead of stalling on the fence.
    for (std::size_t j = 0; j < d; ++j) {
      x_cur[j] = x[j] + (1.0 + cfg.overshoot) * r_tot[j];
    }
    current = predict_one(net, x_cur);
    result.per_step_labels.push_back(current);
    ++result.iterations_used;
  }

  result.x_adv = x_cur;
  clip_step(result.x_adv, x, cfg, false);
  finish_result(result, x, label, net);
  return result;
}

}  // namespace detail

inline AttackResult run_attack(const Network& net, const std::vector<double>& x,
                               int label, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::iter_fsgm:
      return detail::fsgm_family(net, x, label, cfg, false);
    case AttackKind::iter_ll_fsgm:
      return detail::fsgm_family(net, x, label, cfg, true);
    case AttackKind::deepfool:
      return detail::deepfool_attack(net, x, label, cfg);
  }
  throw std::logic_error("run_attack: bad enum");
}

inline std::vector<AttackResult> attack_dataset(const Network& net,
                                                const Dataset& data,
                                                const AttackConfig& cfg) {
  validate(data);
  std::vector<AttackResult> results;
  results.reserve(data.features.rows());
  for (std::size_t i = 0; i < data.features.rows(); ++i) {
    results.push_back(
        run_attack(net, data.features.row_copy(i), data.labels[i], cfg));
  }
  return results;
}

// Mean relative perturbation over a whole dataset.
inline double mean_perturbation_ratio(const std::vector<AttackResult>& results) {
  if (results.empty()) {
    throw std::invalid_argument("mean_perturbation_ratio: no results");
  }
  double sum = 0.0;
  for (const AttackResult& r : results) sum += r.rho;
  return sum / static_cast<double>(results.size());
}

// Accuracy of `target` on adversarial examples crafted against `source`.
// Passing the same network twice gives the white-box number.
inline double adversarial_accuracy(const Network& target, const Network& source,
                                   const Dataset& data,
                                   const AttackConfig& cfg) {
  validate(data);
  if (data.features.cols() != target.input_dim() ||
      target.input_dim() != source.input_dim()) {
    throw std::invalid_argument("adversarial_accuracy: width mismatch");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.features.rows(); ++i) {
    AttackResult r =
        run_attack(source, data.features.row_copy(i), data.labels[i], cfg);
    if (predict_one(target, r.x_adv) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(data.features.rows());
}

struct AccuracyCurves {
  // Indexed by attack step k = 1..K, both referenced to the step-0 label.
  std::vector<double> instantaneous;  // fraction matching at step k
  std::vector<double> cumulative;     // fraction never off through step k
};

// Per-iteration accuracy curves over equal-length attack traces. The
// instantaneous curve can recover when an iterate swings back across the
// boundary; the cumulative curve cannot, so it lower-bounds the other.
inline AccuracyCurves accuracy_curves(const std::vector<AttackResult>& results) {
  if (results.empty()) {
    throw std::invalid_argument("accuracy_curves: no traces");
  }
  std::size_t steps = results[0].per_step_labels.size();
  if (steps == 0) {
    throw std::invalid_argument("accuracy_curves: empty trace");
  }
  for (const AttackResult& r : results) {
    if (r.per_step_labels.size() != steps) {
      throw std::invalid_argument("accuracy_curves: traces differ in length");
    }
  }
  AccuracyCurves curves;
  curves.instantaneous.reserve(steps - 1);
  curves.cumulative.reserve(steps - 1);
  std::vector<bool> ever_off(results.size(), false);
  double inv = 1.0 / static_cast<double>(results.size());
  for (std::size_t k = 1; k < steps; ++k) {
    std::size_t match = 0;
    std::size_t held = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const std::vector<int>& trace = results[i].per_step_labels;
      if (trace[k] == trace[0]) {
        ++match;
      } else {
        ever_off[i] = true;
      }
      if (!ever_off[i]) ++held;
    }
    curves.instantaneous.push_back(static_cast<double>(match) * inv);
    curves.cumulative.push_back(static_cast<double>(held) * inv);
  }
  return curves;
}

struct MinPerturbation {
  double epsilon = 0.0;
  bool reached = false;  // some budget fooled at least the target fraction
  double fooled_fraction = 0.0;
};

// Smallest L-inf budget at which the attack fools at least 99% of the
// dataset: a doubling grid from 0.001 up to cfg.epsilon brackets the
// threshold, then eight bisection steps tighten it.
inline MinPerturbation min_perturbation_search(const Network& net,
                                               const Dataset& data,
                                               const AttackConfig& cfg) {
  if (cfg.kind == AttackKind::deepfool) {
    throw std::invalid_argument(
        "min_perturbation_search: needs a budgeted attack");
  }
  validate(data);
  constexpr double kTargetFraction = 0.99;
  AttackConfig probe = cfg;
  probe.stop = StopMode::until_misclassified;

  auto fooled_fraction = [&](double eps) {
    probe.epsilon = eps;
    std::size_t fooled = 0;
    for (std::size_t i = 0; i < data.features.rows(); ++i) {
      AttackResult r =
          run_attack(net, data.features.row_copy(i), data.labels[i], probe);
      if (r.fooled) ++fooled;
    }
    return static_cast<double>(fooled) /
           static_cast<double>(data.features.rows());
  };

  double frac = fooled_fraction(0.0);
  if (frac >= kTargetFraction) return {0.0, true, frac};

  double lo = 0.0;
  double hi = -1.0;
  double hi_frac = 0.0;
  for (double eps = 0.001; eps < cfg.epsilon; eps *= 2.0) {
    frac = fooled_fraction(eps);
    if (frac >= kTargetFraction) {
      hi = eps;
      hi_frac = frac;
      break;
    }
    lo = eps;
  }
  if (hi < 0.0) {
    frac = fooled_fraction(cfg.epsilon);
    if (frac < kTargetFraction) return {cfg.epsilon, false, frac};
    hi = cfg.epsilon;
    hi_frac = frac;
  }
  for (int step = 0; step < 8; ++step) {
    double mid = 0.5 * (lo + hi);
    frac = fooled_fraction(mid);
    if (frac >= kTargetFraction) {
      hi = mid;
      hi_frac = frac;
    } else {
      lo = mid;
    }
  }
  return {hi, true, hi_frac};
}

}  // namespace lowrank
