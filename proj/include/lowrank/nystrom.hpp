#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/rng.hpp"
#include "lowrank/svd.hpp"

namespace lowrank {

enum class ProjectionBackend { exact_svd, nystrom_single, nystrom_ensembled };

inline const char* backend_name(ProjectionBackend backend) {
  switch (backend) {
    case ProjectionBackend::exact_svd: return "exact-svd";
    case ProjectionBackend::nystrom_single: return "nystrom-single";
    case ProjectionBackend::nystrom_ensembled: return "nystrom-ensembled";
  }
  throw std::logic_error("backend_name: bad enum");
}

inline ProjectionBackend parse_backend(const std::string& name) {
  if (name == "exact-svd") return ProjectionBackend::exact_svd;
  if (name == "nystrom-single") return ProjectionBackend::nystrom_single;
  if (name == "nystrom-ensembled") return ProjectionBackend::nystrom_ensembled;
  throw std::invalid_argument("unknown projection backend: " + name);
}

struct NystromConfig {
  std::size_t sample_count = 0;  // l; 0 picks min(2 * rank, dim)
  std::size_t ensemble_runs = 1;
  double smoothing_delta = 0.01;
  std::size_t max_smoothing_attempts = 20;
  std::uint64_t rng_seed = 0;
  std::size_t svd_max_sweeps = kDefaultSvdSweeps;
};

class SmoothingError : public std::runtime_error {
 public:
  SmoothingError()
      : std::runtime_error(
            "smoothing failed: svd did not converge within "
            "max_smoothing_attempts") {}
};

// (w + w^T) / 2, computed once per unordered pair so the result is
// bitwise symmetric.
inline Matrix symmetrize(const Matrix& w) {
  if (w.rows() != w.cols()) {
    throw std::invalid_argument("symmetrize: matrix must be square");
  }
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    out(i, i) = w(i, i);
    for (std::size_t j = i + 1; j < w.cols(); ++j) {
      double v = 0.5 * (w(i, j) + w(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

// Adds k * delta * I for the smallest k in [0, max_smoothing_attempts] at
// which the SVD converges within the configured sweep budget. Returns the
// shifted matrix and k.
inline std::pair<Matrix, std::size_t> smooth_for_svd(
    const Matrix& z, const NystromConfig& cfg) {
  if (z.rows() != z.cols()) {
    throw std::invalid_argument("smooth_for_svd: matrix must be square");
  }
  Matrix shifted = z;
  for (std::size_t attempt = 0; attempt <= cfg.max_smoothing_attempts;
       ++attempt) {
    if (attempt > 0) {
      for (std::size_t i = 0; i < shifted.rows(); ++i) {
        shifted(i, i) += cfg.smoothing_delta;
      }
    }
    try {
      svd(shifted, cfg.svd_max_sweeps);
      return {std::move(shifted), attempt};
    } catch (const SvdError&) {
    }
  }
  throw SmoothingError();
}

namespace detail {

inline void check_loosely_symmetric(const Matrix& w, const char* who) {
  double worst = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = i + 1; j < w.cols(); ++j) {
      worst = std::max(worst, std::abs(w(i, j) - w(j, i)));
    }
  }
  if (worst > 1e-8 * (1.0 + max_abs(w))) {
    throw std::invalid_argument(std::string(who) + ": matrix is not symmetric");
  }
}

// One Nystrom pass: sample l columns, smooth the principal submatrix,
// pseudo-invert its best rank-r part, and assemble C * Z_r^+ * C^T as a sum
// of symmetric outer products so the result is exactly SPSD.
inline Matrix nystrom_single_run(const Matrix& w, std::size_t rank,
                                 std::size_t samples,
                                 const NystromConfig& cfg,
                                 std::uint64_t seed) {
  std::size_t m = w.rows();
  Rng rng(seed);
  std::vector<std::size_t> idx = sample_without_replacement(m, samples, rng);

  Matrix c(m, samples);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < samples; ++j) c(i, j) = w(i, idx[j]);
  }
  Matrix z(samples, samples);
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t j = 0; j < samples; ++j) z(i, j) = w(idx[i], idx[j]);
  }
  z = symmetrize(z);

  auto [smoothed, attempts] = smooth_for_svd(z, cfg);
  (void)attempts;
  Svd dec = svd(smoothed, cfg.svd_max_sweeps);

  Matrix out(m, m);
  if (dec.s.empty() || dec.s[0] == 0.0) return out;
  double cutoff = 1e-10 * dec.s[0];
  for (std::size_t k = 0; k < std::min(rank, dec.s.size()); ++k) {
    if (dec.s[k] <= cutoff) break;
    // Components whose left and right vectors disagree in sign carry
    // negative eigenvalues; inverting those would destroy positive
    // semidefiniteness, so they are dropped.
    double alignment = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      alignment += dec.u(i, k) * dec.v(i, k);
    }
    if (alignment <= 0.0) continue;
    std::vector<double> y(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < samples; ++j) acc += c(i, j) * dec.v(j, k);
      y[i] = acc;
    }
    double inv = 1.0 / dec.s[k];
    for (std::size_t i = 0; i < m; ++i) {
      double yi = y[i] * inv;
      if (yi == 0.0) continue;
      // Mirrored writes share one rounded product so the result is
      // symmetric down to the last bit.
      for (std::size_t j = i; j < m; ++j) {
        double contrib = yi * y[j];
        out(i, j) += contrib;
        if (j != i) out(j, i) += contrib;
      }
    }
  }
  return out;
}

}  // namespace detail

inline Matrix nystrom_approx(const Matrix& w, std::size_t rank,
                             const NystromConfig& cfg) {
  if (w.rows() != w.cols() || w.rows() == 0) {
    throw std::invalid_argument("nystrom_approx: matrix must be square");
  }
  detail::check_loosely_symmetric(w, "nystrom_approx");
  std::size_t m = w.rows();
  std::size_t samples =
      cfg.sample_count == 0 ? std::min(2 * rank, m) : cfg.sample_count;
  if (samples > m) {
    throw std::invalid_argument("nystrom_approx: sample_count exceeds dimension");
  }
  if (samples < rank) {
    throw std::invalid_argument("nystrom_approx: sample_count below rank");
  }
  if (rank == 0) return Matrix(m, m);
  if (cfg.ensemble_runs == 0) {
    throw std::invalid_argument("nystrom_approx: ensemble_runs must be positive");
  }

  Matrix accum(m, m);
  for (std::size_t run = 0; run < cfg.ensemble_runs; ++run) {
    Matrix part = detail::nystrom_single_run(w, rank, samples, cfg,
                                             derive_seed(cfg.rng_seed, run));
    add_in_place(accum, part);
  }
  if (cfg.ensemble_runs > 1) {
    accum = scale(accum, 1.0 / static_cast<double>(cfg.ensemble_runs));
  }
  return accum;
}

// Rank projection of a (re-symmetrized) carrier matrix onto the SPSD cone.
// The exact backend keeps the top-r eigenpairs with negative eigenvalues
// clamped to zero; the Nystrom backends run the sampled approximation, whose
// ensembled variant may exceed rank r (up to runs * r) while staying SPSD.
inline Matrix project_rank_spsd(const Matrix& w_carrier, std::size_t rank,
                                ProjectionBackend backend,
                                const NystromConfig& cfg = {}) {
  if (w_carrier.rows() != w_carrier.cols() || w_carrier.rows() == 0) {
    throw std::invalid_argument("project_rank_spsd: matrix must be square");
  }
  if (rank > w_carrier.rows()) {
    throw std::invalid_argument("project_rank_spsd: rank exceeds dimension");
  }
  Matrix w = symmetrize(w_carrier);
  std::size_t m = w.rows();

  if (backend == ProjectionBackend::exact_svd) {
    if (rank == 0) return Matrix(m, m);
    SymEig eig = sym_eig(w);
    Matrix out(m, m);
    for (std::size_t k = 0; k < rank; ++k) {
      double lambda = std::max(eig.values[k], 0.0);
      if (lambda == 0.0) break;
      for (std::size_t i = 0; i < m; ++i) {
        double qi = eig.vectors(i, k) * lambda;
        if (qi == 0.0) continue;
        // Mirrored writes share one rounded product so the result is
        // symmetric down to the last bit.
        for (std::size_t j = i; j < m; ++j) {
          double contrib = qi * eig.vectors(j, k);
          out(i, j) += contrib;
          if (j != i) out(j, i) += contrib;
        }
      }
    }
    return out;
  }

  NystromConfig run_cfg = cfg;
  if (backend == ProjectionBackend::nystrom_single) run_cfg.ensemble_runs = 1;
  return nystrom_approx(w, rank, run_cfg);
}

}  // namespace lowrank
