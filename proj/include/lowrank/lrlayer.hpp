#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/nystrom.hpp"
#include "lowrank/train.hpp"

namespace lowrank {

// Auxiliary low-rank regularizer attached at a tap. It owns a square carrier
// matrix W_s and bias b that see the tap activations through two penalties:
// a compression loss pulling activations toward an r-dimensional subspace
// and a norm loss keeping activation norms near one. The effective W is the
// symmetrized carrier, its rank is cut back to target_rank every
// projection_period steps, and nothing here ever touches the inference path.
struct LRLayerState {
  Matrix w_carrier;           // W_s, dim x dim
  std::vector<double> bias;   // b
  std::size_t target_rank = 1;
  double lambda1 = 1.0;  // weight of the compression loss
  double lambda2 = 1.0;  // weight of the norm loss
  // W learning rate; empty follows the network schedule rate.
  std::optional<double> w_learning_rate;
  std::size_t projection_period = 10;
  std::size_t step_counter = 0;
  ProjectionBackend backend = ProjectionBackend::exact_svd;
  NystromConfig nystrom;
};

inline LRLayerState make_lr_state(std::size_t dim, std::size_t rank) {
  if (dim == 0 || rank == 0 || rank >= dim) {
    throw std::invalid_argument("make_lr_state: need 0 < rank < dim");
  }
  LRLayerState state;
  state.w_carrier = Matrix::identity(dim);
  state.bias.assign(dim, 0.0);
  state.target_rank = rank;
  return state;
}

struct LRLosses {
  Matrix projected;  // (A + 1 b^T) W
  double loss_c = 0.0;
  double loss_n = 0.0;
};

struct LRGrads {
  double loss_c = 0.0;
  double loss_n = 0.0;
  // d(lambda1 * loss_c + lambda2 * loss_n) / dA, batch mean included.
  Matrix grad_activations;
  // d(lambda1 * loss_c) / dW_s through the symmetrization, and / db.
  Matrix grad_w;
  std::vector<double> grad_b;
};

namespace detail {

inline void check_lr_shapes(const Matrix& activations,
                            const LRLayerState& state) {
  if (activations.rows() == 0) {
    throw std::invalid_argument("lr layer: empty batch");
  }
  if (state.w_carrier.rows() != state.w_carrier.cols() ||
      state.w_carrier.rows() != activations.cols() ||
      state.bias.size() != activations.cols()) {
    throw std::invalid_argument("lr layer: state does not match activations");
  }
}

inline Matrix shifted_activations(const Matrix& activations,
                                  const std::vector<double>& bias) {
  Matrix c = activations;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double* row = c.row(r);
    for (std::size_t j = 0; j < c.cols(); ++j) row[j] += bias[j];
  }
  return c;
}

inline double sum_of_squares(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return acc;
}

}  // namespace detail

inline LRLosses lr_losses(const Matrix& activations, const LRLayerState& state) {
  detail::check_lr_shapes(activations, state);
  std::size_t n = activations.rows();
  Matrix w = symmetrize(state.w_carrier);
  Matrix c = detail::shifted_activations(activations, state.bias);

  LRLosses out;
  out.projected = multiply(c, w);
  Matrix residual = subtract(out.projected, c);
  out.loss_c = detail::sum_of_squares(residual) / static_cast<double>(n);

  double norm_sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    norm_sum += std::abs(1.0 - norm2(activations.row_copy(r)));
  }
  out.loss_n = norm_sum / static_cast<double>(n);
  return out;
}

inline LRGrads lr_grads(const Matrix& activations, const LRLayerState& state) {
  detail::check_lr_shapes(activations, state);
  std::size_t n = activations.rows();
  std::size_t m = activations.cols();
  double inv_n = 1.0 / static_cast<double>(n);
  Matrix w = symmetrize(state.w_carrier);
  Matrix c = detail::shifted_activations(activations, state.bias);

  Matrix residual = subtract(multiply(c, w), c);  // C W - C

  LRGrads out;
  out.loss_c = detail::sum_of_squares(residual) * inv_n;

  // dLc/dC = (2/n) R (W - I); W - I is symmetric.
  Matrix shifted = multiply(residual, w);
  Matrix grad_c = scale(subtract(shifted, residual), 2.0 * inv_n);

  // dLc/dW = (2/n) C^T R, symmetrized for the carrier.
  Matrix grad_w_free = scale(multiply_at_b(c, residual), 2.0 * inv_n);
  out.grad_w = scale(symmetrize(grad_w_free), state.lambda1);

  out.grad_b.assign(m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = grad_c.row(r);
    for (std::size_t j = 0; j < m; ++j) out.grad_b[j] += row[j];
  }
  for (double& v : out.grad_b) v *= state.lambda1;

  out.grad_activations = Matrix(n, m);
  double norm_sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = activations.row(r);
    double norm = 0.0;
    for (std::size_t j = 0; j < m; ++j) norm += arow[j] * arow[j];
    norm = std::sqrt(norm);
    double gap = 1.0 - norm;
    norm_sum += std::abs(gap);
    double* grow = out.grad_activations.row(r);
    // The norm loss is kinked at ||a|| = 1 and undefined at 0; both get a
    // zero gradient.
    double norm_coeff = 0.0;
    if (norm > 0.0 && std::abs(gap) >= 1e-12) {
      norm_coeff = -(gap > 0.0 ? 1.0 : -1.0) * state.lambda2 * inv_n / norm;
    }
    for (std::size_t j = 0; j < m; ++j) {
      grow[j] = state.lambda1 * grad_c(r, j) + norm_coeff * arow[j];
    }
  }
  out.loss_n = norm_sum * inv_n;
  return out;
}

// One carrier update followed by the periodic rank cut. A zero rate is a
// pure counter tick: the carrier, bias, and projection are all skipped so an
// inert regularizer never drifts.
inline void lr_step(LRLayerState& state, const Matrix& grad_w,
                    const std::vector<double>& grad_b, double rate) {
  if (!grad_w.same_shape(state.w_carrier) ||
      grad_b.size() != state.bias.size()) {
    throw std::invalid_argument("lr_step: gradient shapes do not match state");
  }
  ++state.step_counter;
  if (rate == 0.0) return;
  axpy(state.w_carrier, -rate, grad_w);
  for (std::size_t j = 0; j < state.bias.size(); ++j) {
    state.bias[j] -= rate * grad_b[j];
  }
  if (state.projection_period > 0 &&
      state.step_counter % state.projection_period == 0) {
    state.w_carrier = project_rank_spsd(state.w_carrier, state.target_rank,
                                        state.backend, state.nystrom);
  }
}

// Training adapter: computes the batch gradients, advances the state with
// its own learning rate (or the schedule rate), and hands the activation
// gradient back to the backward pass.
inline TapHook make_lr_hook(LRLayerState& state, std::size_t tap) {
  return {tap, [&state](const Matrix& activations, double schedule_rate) {
            LRGrads grads = lr_grads(activations, state);
            double rate = state.w_learning_rate.value_or(schedule_rate);
            lr_step(state, grads.grad_w, grads.grad_b, rate);
            return std::move(grads.grad_activations);
          }};
}

}  // namespace lowrank
