// SPDX-License-Identifier: Apache-2.0
#include "corda/quant.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace corda {

using nlohmann::json;

double nf4_max_gap() {
  double gap = 0.0;
  for (std::size_t i = 0; i + 1 < kNf4Codebook.size(); ++i) {
    gap = std::max(gap, kNf4Codebook[i + 1] - kNf4Codebook[i]);
  }
  return gap;
}

QuantizedTensor nf4_quantize(const Matrix& m, std::size_t block_size) {
  if (block_size == 0) throw MethodError("nf4_quantize: block_size == 0");
  QuantizedTensor q;
  q.rows = m.rows();
  q.cols = m.cols();
  q.block_size = block_size;
  const std::size_t n = m.size();
  q.codes.resize(n);
  const std::size_t blocks = (n + block_size - 1) / block_size;
  q.absmax.resize(blocks);

  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t lo = b * block_size;
    const std::size_t hi = std::min(lo + block_size, n);
    double scale = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      scale = std::max(scale, std::abs(m.data()[i]));
    }
    q.absmax[b] = scale;
    if (scale == 0.0) {
      for (std::size_t i = lo; i < hi; ++i) q.codes[i] = kNf4ZeroCode;
      continue;
    }
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = m.data()[i] / scale;
      std::uint8_t best = 0;
      double best_dist = std::abs(v - kNf4Codebook[0]);
      for (std::uint8_t code = 1; code < 16; ++code) {
        const double dist = std::abs(v - kNf4Codebook[code]);
        if (dist < best_dist) {  // strict: ties keep the lower index
          best_dist = dist;
          best = code;
        }
      }
      q.codes[i] = best;
    }
  }
  return q;
}

Matrix nf4_dequantize(const QuantizedTensor& q) {
  if (q.rows * q.cols != q.codes.size()) {
    throw MethodError("nf4_dequantize: code count does not match shape");
  }
  const std::size_t expected_blocks =
      (q.codes.size() + q.block_size - 1) / q.block_size;
  if (q.absmax.size() != expected_blocks) {
    throw MethodError("nf4_dequantize: absmax count does not match blocks");
  }
  Matrix m(q.rows, q.cols);
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    const std::uint8_t code = q.codes[i];
    if (code > 15) {
      throw MethodError("nf4_dequantize: malformed code " +
                        std::to_string(code) + " at element " +
                        std::to_string(i));
    }
    m.data()[i] = kNf4Codebook[code] * q.absmax[i / q.block_size];
  }
  return m;
}

void save_quantized(const QuantizedTensor& q, const std::filesystem::path& dir,
                    const std::string& name) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["rows"] = q.rows;
  manifest["cols"] = q.cols;
  manifest["block_size"] = q.block_size;
  manifest["blocks"] = q.block_count();
  std::ofstream mo(dir / (name + ".quant.json"));
  if (!mo) throw IoError("cannot write quant manifest for " + name);
  mo << manifest.dump(2) << "\n";

  std::ofstream co(dir / (name + ".codes"), std::ios::binary);
  if (!co) throw IoError("cannot write codes for " + name);
  co.write(reinterpret_cast<const char*>(q.codes.data()),
           static_cast<std::streamsize>(q.codes.size()));

  std::string buf;
  buf.reserve(8 * q.absmax.size());
  for (double v : q.absmax) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int k = 0; k < 8; ++k) {
      buf.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
    }
  }
  std::ofstream ao(dir / (name + ".absmax"), std::ios::binary);
  if (!ao) throw IoError("cannot write absmax for " + name);
  ao.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

QuantizedTensor load_quantized(const std::filesystem::path& dir,
                               const std::string& name) {
  std::ifstream mi(dir / (name + ".quant.json"));
  if (!mi) throw IoError("cannot open quant manifest for " + name);
  json manifest;
  try {
    mi >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad quant manifest: " + std::string(e.what()));
  }
  QuantizedTensor q;
  q.rows = manifest.at("rows").get<std::size_t>();
  q.cols = manifest.at("cols").get<std::size_t>();
  q.block_size = manifest.at("block_size").get<std::size_t>();

  std::ifstream ci(dir / (name + ".codes"), std::ios::binary);
  if (!ci) throw IoError("cannot open codes for " + name);
  std::string codes((std::istreambuf_iterator<char>(ci)),
                    std::istreambuf_iterator<char>());
  if (codes.size() != q.rows * q.cols) {
    throw IoError("truncated code file for " + name);
  }
  q.codes.assign(codes.begin(), codes.end());
  for (std::uint8_t code : q.codes) {
    if (code > 15) throw IoError("malformed code in checkpoint for " + name);
  }

  std::ifstream ai(dir / (name + ".absmax"), std::ios::binary);
  if (!ai) throw IoError("cannot open absmax for " + name);
  std::string raw((std::istreambuf_iterator<char>(ai)),
                  std::istreambuf_iterator<char>());
  const std::size_t blocks = manifest.at("blocks").get<std::size_t>();
  if (raw.size() != 8 * blocks) {
    throw IoError("truncated absmax file for " + name);
  }
  q.absmax.resize(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(raw[8 * b + k]))
              << (8 * k);
    }
    std::memcpy(&q.absmax[b], &bits, sizeof(double));
  }
  return q;
}

}  // namespace corda
