// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "corda/matrix.hpp"

namespace corda {

// The 16 NF4 levels (normal-quantile codebook with 0 and ±1 endpoints),
// ascending. Index 7 is exactly 0.
inline constexpr std::array<double, 16> kNf4Codebook = {
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.39491748809814453,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
};

inline constexpr std::uint8_t kNf4ZeroCode = 7;

// Largest gap between adjacent codebook levels; the per-element
// round-trip error is at most absmax·gap/2.
double nf4_max_gap();

// Blockwise 4-bit quantization of a row-major flattened matrix. Codes
// occupy one byte each; storage saving is simulated, fidelity is not.
struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = 64;
  std::vector<std::uint8_t> codes;  // one per element, values 0..15
  std::vector<double> absmax;       // one per block

  std::size_t block_count() const { return absmax.size(); }
};

// Per block: scale = max|x|; each element maps to the nearest codebook
// value of x/scale, ties to the lower index; zero-scale blocks store
// the zero code.
QuantizedTensor nf4_quantize(const Matrix& m, std::size_t block_size = 64);

Matrix nf4_dequantize(const QuantizedTensor& q);

// Quantized checkpoint: JSON manifest plus raw little-endian code and
// absmax arrays.
void save_quantized(const QuantizedTensor& q,
                    const std::filesystem::path& dir,
                    const std::string& name);
QuantizedTensor load_quantized(const std::filesystem::path& dir,
                               const std::string& name);

}  // namespace corda
