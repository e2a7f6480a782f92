// SPDX-License-Identifier: Apache-2.0
#include "corda/linalg.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <string>

namespace corda {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(
      m.data(), static_cast<Eigen::Index>(m.rows()),
      static_cast<Eigen::Index>(m.cols()));
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix out(static_cast<std::size_t>(e.rows()),
             static_cast<std::size_t>(e.cols()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>>(out.data(), e.rows(), e.cols()) =
      e;
  return out;
}

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.empty()) throw MethodError("svd: empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(
      to_eigen(m), Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (solver.info() != Eigen::Success) {
    throw MethodError("svd: did not converge for " + shape_of(m) + " matrix");
  }
  SvdResult out;
  out.u = from_eigen(solver.matrixU());
  out.vt = from_eigen(solver.matrixV().transpose());
  const auto& s = solver.singularValues();
  out.sigma.assign(s.data(), s.data() + s.size());
  return out;
}

std::vector<double> singular_values(const Matrix& m) {
  if (m.empty()) throw MethodError("singular_values: empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(to_eigen(m));
  if (solver.info() != Eigen::Success) {
    throw MethodError("singular_values: did not converge for " + shape_of(m) +
                      " matrix");
  }
  const auto& s = solver.singularValues();
  return {s.data(), s.data() + s.size()};
}

std::vector<double> symmetric_eigenvalues(const Matrix& c) {
  if (c.rows() != c.cols()) {
    throw MethodError("symmetric_eigenvalues: matrix is " + shape_of(c));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      to_eigen(c), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw MethodError("symmetric_eigenvalues: did not converge");
  }
  const auto& ev = solver.eigenvalues();  // ascending
  std::vector<double> out(ev.data(), ev.data() + ev.size());
  std::reverse(out.begin(), out.end());
  return out;
}

RegularizedInverse regularized_inverse(const Matrix& c, double threshold,
                                       double c0) {
  if (c.rows() != c.cols()) {
    throw MethodError("regularized_inverse: matrix is " + shape_of(c));
  }
  const double scale = c.max_abs();
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = i + 1; j < c.cols(); ++j) {
      if (std::abs(c(i, j) - c(j, i)) > 1e-9 * std::max(scale, 1e-300)) {
        throw MethodError("regularized_inverse: matrix is not symmetric");
      }
    }
  }

  const Eigen::Index n = static_cast<Eigen::Index>(c.rows());
  const Eigen::MatrixXd base = to_eigen(c);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  auto attempt = [&](const Eigen::MatrixXd& mat, double coefficient,
                     RegularizedInverse& out) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(mat);
    Eigen::MatrixXd inv = lu.solve(eye);
    const double residual = (mat * inv - eye).norm();
    // A NaN residual (singular matrix) must fall through to the boosted
    // retry, hence the negated comparison.
    if (!(residual <= threshold)) return false;
    out.c_reg = from_eigen(mat);
    out.c_inv = from_eigen(inv);
    out.coefficient = coefficient;
    out.residual_norm = residual;
    return true;
  };

  RegularizedInverse result;
  if (attempt(base, 0.0, result)) return result;

  double mean_diag = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) mean_diag += c(i, i);
  mean_diag /= static_cast<double>(c.rows());
  if (mean_diag <= 0.0) {
    throw MethodError(
        "regularized_inverse: degenerate covariance, mean(diag) <= 0");
  }

  double multiplier = c0;
  for (int k = 0; k <= kMaxInverseDoublings; ++k, multiplier *= 2.0) {
    const double boost = mean_diag * multiplier;
    if (attempt(base + boost * eye, boost, result)) return result;
  }
  throw MethodError("regularized_inverse: residual above " +
                    std::to_string(threshold) + " after " +
                    std::to_string(kMaxInverseDoublings) + " doublings");
}

}  // namespace corda
