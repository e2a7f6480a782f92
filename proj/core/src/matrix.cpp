// SPDX-License-Identifier: Apache-2.0
#include "corda/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "corda/rng.hpp"

namespace corda {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

ConstRowMajorMap map_of(const Matrix& m) {
  return ConstRowMajorMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                          static_cast<Eigen::Index>(m.cols()));
}

RowMajorMap map_of(Matrix& m) {
  return RowMajorMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                     static_cast<Eigen::Index>(m.cols()));
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) {
    throw MethodError(std::string(what) + ": non-finite entries");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  if (rows == 0 || cols == 0) {
    throw MethodError("Matrix: dimensions must be positive");
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw MethodError("Matrix: dimensions must be positive");
  }
  if (data_.size() != rows * cols) {
    throw MethodError("Matrix: data length " + std::to_string(data_.size()) +
                      " does not match " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  require_finite(*this, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  return out;
}

double Matrix::frobenius_norm() const {
  double sum = 0.0;
  for (double v : data_) sum += v * v;
  return std::sqrt(sum);
}

double Matrix::max_abs() const {
  double best = 0.0;
  for (double v : data_) best = std::max(best, std::abs(v));
  return best;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw MethodError("matmul: inner dimensions " + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  map_of(out).noalias() = map_of(a) * map_of(b);
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw MethodError("matrix add: shape mismatch");
  }
  Matrix out(a.rows(), a.cols());
  map_of(out) = map_of(a) + map_of(b);
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw MethodError("matrix sub: shape mismatch");
  }
  Matrix out(a.rows(), a.cols());
  map_of(out) = map_of(a) - map_of(b);
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  map_of(out) = s * map_of(a);
  return out;
}

Matrix random_uniform_matrix(std::size_t rows, std::size_t cols, double lo,
                             double hi, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

Matrix random_normal_matrix(std::size_t rows, std::size_t cols,
                            std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

namespace {

constexpr char kMagic[5] = {'C', 'O', 'R', 'D', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int k = 0; k < 8; ++k) {
    out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
  }
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) {
    bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  }
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_cord1(const Matrix& m, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(13 + 8 * m.size());
  buf.append(kMagic, sizeof(kMagic));
  put_u32_le(buf, static_cast<std::uint32_t>(m.rows()));
  put_u32_le(buf, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) put_f64_le(buf, m.data()[i]);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Matrix load_cord1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 13 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a CORD1 file: " + path.string());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t rows = get_u32_le(p + 5);
  const std::uint32_t cols = get_u32_le(p + 9);
  const std::size_t expect = 13 + 8ull * rows * cols;
  if (rows == 0 || cols == 0 || buf.size() != expect) {
    throw IoError("truncated or malformed CORD1 file: " + path.string());
  }
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = get_f64_le(p + 13 + 8 * i);
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw IoError("non-finite entry in CORD1 file: " + path.string());
    }
  }
  return Matrix(rows, cols, std::move(data));
}

}  // namespace corda
