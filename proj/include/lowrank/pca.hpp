#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/svd.hpp"

namespace lowrank {

// Principal components of standardized data. Features are centered by mean
// and divided by per-feature std before projection; a feature with
// std < 1e-12 keeps scale 1 so constant columns pass through harmlessly.
struct PcaModel {
  std::vector<double> mean;
  std::vector<double> scale;
  Matrix components;  // features x target_dim, orthonormal columns
};

namespace detail {

inline Matrix standardize(const PcaModel& model, const Matrix& data) {
  if (data.cols() != model.mean.size()) {
    throw std::invalid_argument("pca: feature count mismatch");
  }
  Matrix out = data;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) {
      row[c] = (row[c] - model.mean[c]) / model.scale[c];
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<PcaModel, Matrix> pca_fit_transform(const Matrix& data,
                                                     std::size_t target_dim) {
  if (data.rows() < 2) {
    throw std::invalid_argument("pca_fit_transform: need at least two rows");
  }
  if (target_dim == 0 || target_dim > data.cols()) {
    throw std::invalid_argument("pca_fit_transform: bad target_dim");
  }
  std::size_t n = data.rows();
  std::size_t m = data.cols();

  PcaModel model;
  model.mean.assign(m, 0.0);
  model.scale.assign(m, 1.0);
  for (std::size_t c = 0; c < m; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) acc += data(r, c);
    model.mean[c] = acc / static_cast<double>(n);
  }
  for (std::size_t c = 0; c < m; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double d = data(r, c) - model.mean[c];
      acc += d * d;
    }
    double sd = std::sqrt(acc / static_cast<double>(n));
    model.scale[c] = (sd < 1e-12) ? 1.0 : sd;
  }

  Matrix standardized = detail::standardize(model, data);
  Svd dec = svd(standardized);
  model.components = Matrix(m, target_dim);
  for (std::size_t j = 0; j < target_dim; ++j) {
    // Sign convention: the largest-magnitude coordinate is made positive so
    // the fit is unambiguous.
    std::size_t peak = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (std::abs(dec.v(i, j)) > std::abs(dec.v(peak, j))) peak = i;
    }
    double sign = (dec.v(peak, j) < 0.0) ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      model.components(i, j) = sign * dec.v(i, j);
    }
  }
  Matrix projected = multiply(standardized, model.components);
  return {std::move(model), std::move(projected)};
}

inline Matrix pca_transform(const PcaModel& model, const Matrix& data) {
  return multiply(detail::standardize(model, data), model.components);
}

// Maps projected rows back to the original feature space and units.
inline Matrix pca_inverse_transform(const PcaModel& model,
                                    const Matrix& projected) {
  if (projected.cols() != model.components.cols()) {
    throw std::invalid_argument("pca_inverse_transform: dimension mismatch");
  }
  Matrix out = multiply_a_bt(projected, model.components);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) {
      row[c] = row[c] * model.scale[c] + model.mean[c];
    }
  }
  return out;
}

}  // namespace lowrank
