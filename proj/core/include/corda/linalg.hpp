// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "corda/matrix.hpp"

namespace corda {

// Full SVD M = U·diag(sigma)·Vᵀ with square orthogonal U (m×m) and
// V (n×n); sigma holds the min(m,n) singular values, descending.
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix vt;
};

// Deterministic full SVD (Jacobi iteration, no randomized pivoting).
SvdResult svd(const Matrix& m);

// Singular values only, same algorithm.
std::vector<double> singular_values(const Matrix& m);

// Eigenvalues of a symmetric matrix, descending.
std::vector<double> symmetric_eigenvalues(const Matrix& c);

// Result of inverting a covariance matrix, boosting the diagonal when
// plain inversion is not accurate enough. c_reg is the matrix actually
// inverted downstream; coefficient is the diagonal boost that was added
// (0 when c inverted cleanly); residual_norm is the achieved
// ‖c_reg·c_inv − I‖_F.
struct RegularizedInverse {
  Matrix c_reg;
  Matrix c_inv;
  double coefficient = 0.0;
  double residual_norm = 0.0;
};

inline constexpr double kDefaultInverseC0 = 1e-6;
inline constexpr int kMaxInverseDoublings = 40;

// Default residual threshold: 1e-6·sqrt(d) for a d×d covariance.
inline double default_inverse_threshold(std::size_t dim) {
  return 1e-6 * std::sqrt(static_cast<double>(dim));
}

// Knobs for the inversion used throughout the decomposition pipeline.
// The absolute threshold for a layer is threshold_scale·sqrt(d_in).
struct InverseOptions {
  double threshold_scale = 1e-6;
  double c0 = kDefaultInverseC0;

  double threshold_for(std::size_t dim) const {
    return threshold_scale * std::sqrt(static_cast<double>(dim));
  }
};

// Inverts c. Tries the plain inverse first; while the residual exceeds
// the threshold, adds mean(diag(c))·c0·2ᵏ to the diagonal for k = 0, 1, …
// (doubling), failing after kMaxInverseDoublings.
RegularizedInverse regularized_inverse(const Matrix& c, double threshold,
                                       double c0 = kDefaultInverseC0);

}  // namespace corda
