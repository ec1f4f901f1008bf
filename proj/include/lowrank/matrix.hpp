#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace lowrank {

// Dense row-major matrix of doubles. All numerics in this library are 64-bit.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) {
        throw std::invalid_argument("Matrix::from_rows: ragged rows");
      }
      std::size_t c = 0;
      for (double v : row) m(r, c++) = v;
      ++r;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double> row_copy(std::size_t r) const {
    return std::vector<double>(row(r), row(r) + cols_);
  }

  void set_row(std::size_t r, const std::vector<double>& values) {
    if (values.size() != cols_) {
      throw std::invalid_argument("Matrix::set_row: size mismatch");
    }
    for (std::size_t c = 0; c < cols_; ++c) (*this)(r, c) = values[c];
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void check_same_shape(const Matrix& a, const Matrix& b,
                             const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

// a * b
// Inner loops run over contiguous rows; k is blocked by four so each pass
// reuses the output row while it is hot.
inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("multiply: inner dimensions differ");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t width = b.cols();
  const std::size_t blocked = inner - inner % 4;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    std::size_t k = 0;
    for (; k < blocked; k += 4) {
      const double a0 = arow[k], a1 = arow[k + 1];
      const double a2 = arow[k + 2], a3 = arow[k + 3];
      const double* b0 = b.row(k);
      const double* b1 = b.row(k + 1);
      const double* b2 = b.row(k + 2);
      const double* b3 = b.row(k + 3);
      for (std::size_t j = 0; j < width; ++j) {
        orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; k < inner; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < width; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a^T * b
inline Matrix multiply_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("multiply_at_b: row counts differ");
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t width = b.cols();
  const std::size_t blocked = a.rows() - a.rows() % 4;
  for (std::size_t i = 0; i < a.cols(); ++i) {
    double* orow = out.row(i);
    std::size_t k = 0;
    for (; k < blocked; k += 4) {
      const double a0 = a(k, i), a1 = a(k + 1, i);
      const double a2 = a(k + 2, i), a3 = a(k + 3, i);
      const double* b0 = b.row(k);
      const double* b1 = b.row(k + 1);
      const double* b2 = b.row(k + 2);
      const double* b3 = b.row(k + 3);
      for (std::size_t j = 0; j < width; ++j) {
        orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; k < a.rows(); ++k) {
      const double aki = a(k, i);
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < width; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

// a * b^T
inline Matrix multiply_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("multiply_a_bt: column counts differ");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  const std::size_t blocked = b.rows() - b.rows() % 4;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    std::size_t j = 0;
    for (; j < blocked; j += 4) {
      const double* b0 = b.row(j);
      const double* b1 = b.row(j + 1);
      const double* b2 = b.row(j + 2);
      const double* b3 = b.row(j + 3);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        const double av = arow[k];
        s0 += av * b0[k];
        s1 += av * b1[k];
        s2 += av * b2[k];
        s3 += av * b3[k];
      }
      orow[j] = s0;
      orow[j + 1] = s1;
      orow[j + 2] = s2;
      orow[j + 3] = s3;
    }
    for (; j < b.rows(); ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "subtract");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

inline Matrix scale(const Matrix& m, double factor) {
  Matrix out = m;
  for (double& v : out.data()) v *= factor;
  return out;
}

inline void add_in_place(Matrix& target, const Matrix& delta) {
  check_same_shape(target, delta, "add_in_place");
  for (std::size_t i = 0; i < target.size(); ++i) {
    target.data()[i] += delta.data()[i];
  }
}

// target += factor * delta
inline void axpy(Matrix& target, double factor, const Matrix& delta) {
  check_same_shape(target, delta, "axpy");
  for (std::size_t i = 0; i < target.size(); ++i) {
    target.data()[i] += factor * delta.data()[i];
  }
}

inline double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.data()) best = std::max(best, std::abs(v));
  return best;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "max_abs_diff");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
  }
  return best;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: size mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline std::vector<double> matvec(const Matrix& m,
                                  const std::vector<double>& v) {
  if (m.cols() != v.size()) {
    throw std::invalid_argument("matvec: size mismatch");
  }
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* mrow = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += mrow[c] * v[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace lowrank
