#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lowrank/dataset.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

struct NoiseConfig {
  double pixel_prob = 0.6;       // chance each feature gets perturbed
  double sigma = 128.0 / 255.0;  // Gaussian noise scale
  std::uint64_t rng_seed = 0;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
};

// Feature-wise Bernoulli-gated Gaussian noise. Every row draws from its own
// seed stream keyed by row index, so the result is independent of how the
// caller batches or slices the evaluation.
inline Matrix perturb_gaussian(const Matrix& features, const NoiseConfig& cfg) {
  if (cfg.pixel_prob < 0.0 || cfg.pixel_prob > 1.0 || cfg.sigma < 0.0 ||
      cfg.clip_lo >= cfg.clip_hi) {
    throw std::invalid_argument("perturb_gaussian: bad config");
  }
  Matrix noisy = features;
  for (std::size_t i = 0; i < noisy.rows(); ++i) {
    Rng rng(derive_seed(cfg.rng_seed, i));
    double* row = noisy.row(i);
    for (std::size_t j = 0; j < noisy.cols(); ++j) {
      if (rng.uniform() < cfg.pixel_prob) {
        row[j] = std::clamp(row[j] + cfg.sigma * rng.normal(), cfg.clip_lo,
                            cfg.clip_hi);
      }
    }
  }
  return noisy;
}

inline double noisy_accuracy(const Network& net, const Dataset& data,
                             const NoiseConfig& cfg) {
  validate(data);
  Matrix noisy = perturb_gaussian(data.features, cfg);
  return classification_accuracy(net, noisy, data.labels);
}

struct PropagationReport {
  double mean_input_ratio = 0.0;  // ||x' - x|| / ||x|| averaged over rows
  double mean_tap_ratio = 0.0;    // same ratio at the tap activation
  double mean_amplification = 0.0;  // tap ratio / input ratio, row-wise
  std::size_t used = 0;
  std::size_t skipped = 0;  // rows with a zero-norm denominator
};

// How strongly an input perturbation shows up at the tap activation,
// row by row across a clean/perturbed dataset pair.
inline PropagationReport perturbation_propagation(const Network& net,
                                                  const Matrix& clean,
                                                  const Matrix& perturbed,
                                                  std::size_t tap) {
  check_same_shape(clean, perturbed, "perturbation_propagation");
  if (clean.rows() == 0) {
    throw std::invalid_argument("perturbation_propagation: empty data");
  }
  if (tap >= net.layers.size()) {
    throw std::invalid_argument("perturbation_propagation: tap out of range");
  }
  Matrix tap_clean = forward_to_tap(net, clean, tap);
  Matrix tap_noisy = forward_to_tap(net, perturbed, tap);

  PropagationReport report;
  double sum_in = 0.0;
  double sum_tap = 0.0;
  double sum_amp = 0.0;
  for (std::size_t i = 0; i < clean.rows(); ++i) {
    double in_norm = norm2(clean.row_copy(i));
    double tap_norm = norm2(tap_clean.row_copy(i));
    double in_diff = 0.0;
    for (std::size_t j = 0; j < clean.cols(); ++j) {
      double d = perturbed(i, j) - clean(i, j);
      in_diff += d * d;
    }
    double tap_diff = 0.0;
    for (std::size_t j = 0; j < tap_clean.cols(); ++j) {
      double d = tap_noisy(i, j) - tap_clean(i, j);
      tap_diff += d * d;
    }
    if (in_norm == 0.0 || tap_norm == 0.0 || in_diff == 0.0) {
      ++report.skipped;
      continue;
    }
    double r_in = std::sqrt(in_diff) / in_norm;
    double r_tap = std::sqrt(tap_diff) / tap_norm;
    sum_in += r_in;
    sum_tap += r_tap;
    sum_amp += r_tap / r_in;
    ++report.used;
  }
  if (report.used > 0) {
    double inv = 1.0 / static_cast<double>(report.used);
    report.mean_input_ratio = sum_in * inv;
    report.mean_tap_ratio = sum_tap * inv;
    report.mean_amplification = sum_amp * inv;
  }
  return report;
}

struct CushionReport {
  double cushion = 0.0;  // min_i ||W v_i|| / (||W||_F ||v_i||)
  std::size_t used = 0;
  std::size_t skipped = 0;  // rows whose layer input has zero norm
};

// Worst-case fraction of a layer's Frobenius capacity that its inputs
// actually use. Values near 1/sqrt(rank) mean well-spread energy; tiny
// values flag directions the data never exercises.
inline CushionReport layer_cushion(const Network& net, const Matrix& features,
                                   std::size_t layer_index) {
  if (layer_index >= net.layers.size()) {
    throw std::invalid_argument("layer_cushion: layer out of range");
  }
  if (features.rows() == 0) {
    throw std::invalid_argument("layer_cushion: empty data");
  }
  Matrix inputs = features;
  if (layer_index > 0) {
    inputs = forward_to_tap(net, features, layer_index - 1);
  }
  Matrix weight = effective_weight(net.layers[layer_index]);
  double weight_norm = frobenius_norm(weight);
  if (weight_norm == 0.0) {
    throw std::invalid_argument("layer_cushion: zero weight matrix");
  }

  CushionReport report;
  report.cushion = 1e300;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    std::vector<double> v = inputs.row_copy(i);
    double v_norm = norm2(v);
    if (v_norm == 0.0) {
      ++report.skipped;
      continue;
    }
    double ratio = norm2(matvec(weight, v)) / (weight_norm * v_norm);
    report.cushion = std::min(report.cushion, ratio);
    ++report.used;
  }
  if (report.used == 0) report.cushion = 0.0;
  return report;
}

}  // namespace lowrank
