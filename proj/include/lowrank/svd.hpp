#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lowrank/matrix.hpp"

namespace lowrank {

inline constexpr std::size_t kDefaultSvdSweeps = 30;

class SvdError : public std::runtime_error {
 public:
  SvdError() : std::runtime_error("svd did not converge") {}
};

// m = u * diag(s) * v^T with u (rows x p), s (p), v (cols x p), p = min dim.
// Singular values are sorted descending; u and v have orthonormal columns.
struct Svd {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

namespace detail {

// Fills any zero columns of u (from exactly zero singular values) with unit
// vectors orthogonal to all other columns, so u always has orthonormal
// columns even for rank-deficient input.
inline void complete_orthonormal_columns(Matrix& u,
                                         const std::vector<bool>& filled) {
  std::size_t rows = u.rows();
  std::vector<bool> done = filled;
  for (std::size_t j = 0; j < u.cols(); ++j) {
    if (done[j]) continue;
    double best_norm = -1.0;
    std::vector<double> best(rows, 0.0);
    for (std::size_t axis = 0; axis < rows; ++axis) {
      std::vector<double> cand(rows, 0.0);
      cand[axis] = 1.0;
      for (std::size_t k = 0; k < u.cols(); ++k) {
        if (!done[k]) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < rows; ++i) proj += u(i, k) * cand[i];
        for (std::size_t i = 0; i < rows; ++i) cand[i] -= proj * u(i, k);
      }
      double n = norm2(cand);
      if (n > best_norm) {
        best_norm = n;
        best = cand;
      }
      if (n > 0.9) break;
    }
    for (double& x : best) x /= best_norm;
    for (std::size_t i = 0; i < rows; ++i) u(i, j) = best[i];
    done[j] = true;
  }
}

inline Svd one_sided_jacobi(const Matrix& m, std::size_t max_sweeps) {
  std::size_t rows = m.rows();
  std::size_t cols = m.cols();
  Matrix b = m;
  Matrix v = Matrix::identity(cols);
  const double tol = std::numeric_limits<double>::epsilon() *
                     static_cast<double>(std::max<std::size_t>(rows, cols));

  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          double bp = b(i, p), bq = b(i, q);
          alpha += bp * bp;
          beta += bq * bq;
          gamma += bp * bq;
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) {
          continue;
        }
        rotated = true;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (std::size_t i = 0; i < rows; ++i) {
          double bp = b(i, p), bq = b(i, q);
          b(i, p) = cs * bp - sn * bq;
          b(i, q) = sn * bp + cs * bq;
        }
        for (std::size_t i = 0; i < cols; ++i) {
          double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged) throw SvdError();

  std::vector<double> norms(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += b(i, j) * b(i, j);
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return norms[a] > norms[c];
  });

  Svd result;
  result.s.resize(cols);
  result.u = Matrix(rows, cols);
  result.v = Matrix(cols, cols);
  std::vector<bool> filled(cols, false);
  for (std::size_t j = 0; j < cols; ++j) {
    std::size_t src = order[j];
    result.s[j] = norms[src];
    for (std::size_t i = 0; i < cols; ++i) result.v(i, j) = v(i, src);
    if (norms[src] > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) {
        result.u(i, j) = b(i, src) / norms[src];
      }
      filled[j] = true;
    }
  }
  complete_orthonormal_columns(result.u, filled);
  return result;
}

}  // namespace detail

inline Svd svd(const Matrix& m, std::size_t max_sweeps = kDefaultSvdSweeps) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("svd: empty matrix");
  }
  if (m.rows() >= m.cols()) return detail::one_sided_jacobi(m, max_sweeps);
  Svd flipped = detail::one_sided_jacobi(transpose(m), max_sweeps);
  return Svd{std::move(flipped.v), std::move(flipped.s),
             std::move(flipped.u)};
}

// a = vectors * diag(values) * vectors^T; values sorted descending,
// vectors orthonormal. Input must be symmetric.
struct SymEig {
  std::vector<double> values;
  Matrix vectors;
};

inline SymEig sym_eig(const Matrix& a, std::size_t max_sweeps = 60) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw std::invalid_argument("sym_eig: matrix must be square");
  }
  std::size_t n = a.rows();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  double scale = max_abs(w);
  const double tol =
      std::numeric_limits<double>::epsilon() * static_cast<double>(n) * scale;

  bool converged = (scale == 0.0);
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = w(p, q);
        if (std::abs(apq) <= tol) continue;
        rotated = true;
        double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        double app = w(p, p), aqq = w(q, q);
        w(p, p) = app - t * apq;
        w(q, q) = aqq + t * apq;
        w(p, q) = 0.0;
        w(q, p) = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          double aip = w(i, p), aiq = w(i, q);
          w(i, p) = cs * aip - sn * aiq;
          w(p, i) = w(i, p);
          w(i, q) = sn * aip + cs * aiq;
          w(q, i) = w(i, q);
        }
        for (std::size_t i = 0; i < n; ++i) {
          double vip = v(i, p), viq = v(i, q);
          v(i, p) = cs * vip - sn * viq;
          v(i, q) = sn * vip + cs * viq;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged) {
    throw std::runtime_error("sym_eig: eigendecomposition did not converge");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return w(x, x) > w(y, y);
  });
  SymEig out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = w(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

// Best rank-r approximation in Frobenius norm (top-r singular triplets).
inline Matrix truncate_rank(const Matrix& m, std::size_t rank) {
  std::size_t p = std::min(m.rows(), m.cols());
  if (rank > p) {
    throw std::invalid_argument("truncate_rank: rank exceeds matrix rank bound");
  }
  if (rank == p) return m;
  Svd dec = svd(m);
  Matrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < rank; ++k) {
    double s = dec.s[k];
    if (s == 0.0) break;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double us = dec.u(i, k) * s;
      if (us == 0.0) continue;
      double* orow = out.row(i);
      for (std::size_t j = 0; j < m.cols(); ++j) {
        orow[j] += us * dec.v(j, k);
      }
    }
  }
  return out;
}

// Fraction of squared spectral mass captured by the top r singular values.
// A zero matrix carries no mass, so every rank captures all of it.
inline double variance_ratio(const Matrix& m, std::size_t rank) {
  std::size_t p = std::min(m.rows(), m.cols());
  if (rank > p) {
    throw std::invalid_argument("variance_ratio: rank exceeds matrix rank bound");
  }
  Svd dec = svd(m);
  double partial = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    total += dec.s[i] * dec.s[i];
    if (i < rank) partial = total;
  }
  if (total == 0.0) return 1.0;
  return partial / total;
}

inline std::size_t matrix_rank(const Matrix& m, double tol = 1e-10) {
  Svd dec = svd(m);
  if (dec.s.empty() || dec.s[0] == 0.0) return 0;
  double cutoff = tol * dec.s[0];
  std::size_t count = 0;
  for (double s : dec.s) {
    if (s > cutoff) ++count;
  }
  return count;
}

struct SpectrumReport {
  std::vector<double> singular_values;
  std::map<std::size_t, double> variance_ratio_at;
};

inline SpectrumReport spectrum(const Matrix& m) {
  Svd dec = svd(m);
  SpectrumReport report;
  report.singular_values = dec.s;
  std::size_t p = dec.s.size();
  std::vector<double> prefix(p + 1, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    prefix[i + 1] = prefix[i] + dec.s[i] * dec.s[i];
  }
  double total = prefix[p];
  for (std::size_t r = 0; r <= p; ++r) {
    report.variance_ratio_at[r] = (total == 0.0) ? 1.0 : prefix[r] / total;
  }
  return report;
}

}  // namespace lowrank
