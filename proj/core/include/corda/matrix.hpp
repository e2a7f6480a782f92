// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "corda/errors.hpp"

namespace corda {

// Dense row-major matrix of 64-bit floats. Entries must be finite on
// construction; dimensions are fixed for the lifetime of the object.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }

  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

  Matrix transposed() const;
  double frobenius_norm() const;
  double max_abs() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

// Seeded dense matrix with entries uniform in [lo, hi), filled row-major.
Matrix random_uniform_matrix(std::size_t rows, std::size_t cols, double lo,
                             double hi, std::uint64_t seed);
// Seeded dense matrix with standard normal entries, filled row-major.
Matrix random_normal_matrix(std::size_t rows, std::size_t cols,
                            std::uint64_t seed);

// CORD1 container: 5-byte magic "CORD1", u32 little-endian rows, u32
// little-endian cols, then rows*cols little-endian IEEE-754 doubles,
// row-major. Used by every module for persistence.
void save_cord1(const Matrix& m, const std::filesystem::path& path);
Matrix load_cord1(const std::filesystem::path& path);

}  // namespace corda
