// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "corda/quant.hpp"
#include "corda/rng.hpp"

using namespace corda;

TEST_CASE("codebook structure") {
  REQUIRE(kNf4Codebook.size() == 16);
  CHECK(kNf4Codebook.front() == -1.0);
  CHECK(kNf4Codebook.back() == 1.0);
  CHECK(kNf4Codebook[kNf4ZeroCode] == 0.0);
  for (std::size_t i = 0; i + 1 < kNf4Codebook.size(); ++i) {
    CHECK(kNf4Codebook[i] < kNf4Codebook[i + 1]);
  }
  // widest between -1 and the next level up (the table is asymmetric)
  CHECK(nf4_max_gap() == doctest::Approx(-0.6961928009986877 + 1.0));
}

TEST_CASE("zero matrix quantizes to the zero code") {
  const Matrix zeros(4, 4);
  const QuantizedTensor q = nf4_quantize(zeros, 8);
  for (std::uint8_t code : q.codes) CHECK(code == kNf4ZeroCode);
  for (double a : q.absmax) CHECK(a == 0.0);
  CHECK(nf4_dequantize(q) == zeros);
}

TEST_CASE("block of [c, -c] hits both codebook endpoints exactly") {
  const double c = 0.37;
  const Matrix m(1, 2, {c, -c});
  const QuantizedTensor q = nf4_quantize(m, 2);
  CHECK(q.codes[0] == 15);
  CHECK(q.codes[1] == 0);
  CHECK(q.absmax[0] == c);
  CHECK(nf4_dequantize(q) == m);
}

TEST_CASE("per-element round-trip error bound, exhaustively") {
  const double half_gap = nf4_max_gap() / 2.0;
  const Matrix m = random_normal_matrix(64, 64, 1234);
  const QuantizedTensor q = nf4_quantize(m, 64);
  const Matrix back = nf4_dequantize(q);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double bound = q.absmax[i / q.block_size] * half_gap;
    CHECK(std::abs(m.data()[i] - back.data()[i]) <= bound + 1e-15);
  }
}

TEST_CASE("quantization picks the nearest level (independent oracle)") {
  const Matrix m = random_uniform_matrix(16, 16, -2.0, 2.0, 777);
  const QuantizedTensor q = nf4_quantize(m, 32);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double scale = q.absmax[i / q.block_size];
    REQUIRE(scale > 0.0);
    const double v = m.data()[i] / scale;
    // oracle: scan the whole codebook
    double best = 1e300;
    for (double level : kNf4Codebook) {
      best = std::min(best, std::abs(v - level));
    }
    CHECK(std::abs(v - kNf4Codebook[q.codes[i]]) ==
          doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("quantize-dequantize-quantize is a fixed point") {
  const Matrix m = random_normal_matrix(32, 32, 4321);
  const QuantizedTensor q1 = nf4_quantize(m, 64);
  const Matrix back = nf4_dequantize(q1);
  const QuantizedTensor q2 = nf4_quantize(back, 64);
  CHECK(q1.codes == q2.codes);
  CHECK(q1.absmax == q2.absmax);
  CHECK(nf4_dequantize(q2) == back);
}

TEST_CASE("seeded 32x32 matrix round-trips below 0.12 relative error") {
  const Matrix m = random_normal_matrix(32, 32, 2025);
  const QuantizedTensor q = nf4_quantize(m, 64);
  const Matrix back = nf4_dequantize(q);
  const double rel = (back - m).frobenius_norm() / m.frobenius_norm();
  CHECK(rel < 0.12);
}

TEST_CASE("ragged final block is handled") {
  const Matrix m = random_normal_matrix(3, 7, 8181);  // 21 elements
  const QuantizedTensor q = nf4_quantize(m, 8);
  CHECK(q.block_count() == 3);
  const Matrix back = nf4_dequantize(q);
  const double half_gap = nf4_max_gap() / 2.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(std::abs(m.data()[i] - back.data()[i]) <=
          q.absmax[i / 8] * half_gap + 1e-15);
  }
}

TEST_CASE("malformed code fails dequantization") {
  QuantizedTensor q;
  q.rows = 1;
  q.cols = 2;
  q.block_size = 2;
  q.codes = {3, 99};
  q.absmax = {1.0};
  CHECK_THROWS_AS(nf4_dequantize(q), MethodError);
}

TEST_CASE("quantized checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "corda_quant";
  std::filesystem::remove_all(dir);
  const Matrix m = random_normal_matrix(9, 5, 11);
  const QuantizedTensor q = nf4_quantize(m, 16);
  save_quantized(q, dir, "layer0.residual");
  const QuantizedTensor loaded = load_quantized(dir, "layer0.residual");
  CHECK(loaded.codes == q.codes);
  CHECK(loaded.absmax == q.absmax);
  CHECK(loaded.block_size == q.block_size);
  CHECK(nf4_dequantize(loaded) == nf4_dequantize(q));
  std::filesystem::remove_all(dir);
}
