// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "corda/cosvd.hpp"

namespace corda {

enum class AdapterKind { kKpm, kIpm, kLora, kPlainSvdTop };
std::string to_string(AdapterKind kind);
AdapterKind adapter_kind_from_string(const std::string& s);

// Learnable low-rank pair; the layer update is b·a (d_out×r times
// r×d_in).
struct AdapterPair {
  Matrix b;
  Matrix a;
  std::size_t rank = 0;
  AdapterKind mode = AdapterKind::kLora;
};

// Frozen residual W′ plus its learnable adapter. At initialization
// residual + b·a = W by construction.
struct AdaptedLayer {
  std::string name;
  Matrix residual;
  AdapterPair adapter;
  std::optional<Matrix> merged;

  std::size_t d_in() const { return residual.cols(); }
  std::size_t d_out() const { return residual.rows(); }
};

struct AdaptedModel {
  std::vector<AdaptedLayer> layers;
  Nonlinearity nonlinearity = Nonlinearity::kTanh;
};

// Bottom r singular triples, √Σ split between b and a:
// b = U[:,−r:]·√Σ[−r:], a = √Σ[−r:]·(VᵀC⁻¹)[−r:,:].
AdapterPair init_kpm(const Decomposition& d, std::size_t r);

// Leading r triples: b = U[:,:r]·√Σ[:r], a = √Σ[:r]·(VᵀC⁻¹)[:r,:].
AdapterPair init_ipm(const Decomposition& d, std::size_t r);

// b = 0, a seeded uniform(−√(3/d_in), √(3/d_in)); b·a = 0 at start.
AdapterPair init_lora(std::size_t d_out, std::size_t d_in, std::size_t r,
                      std::uint64_t seed);

// Top r triples of the plain SVD of W (no covariance).
AdapterPair init_plain_svd_top(const Matrix& w, std::size_t r);

// residual = w − b·a, computed in full precision.
AdaptedLayer make_residual(const Matrix& w, AdapterPair pair);

// merged = residual + b·a; stored on the layer and returned.
const Matrix& merge(AdaptedLayer& layer);

// Per layer computes residual·x + b·(a·x); the sum W′+BA is never
// materialized.
Matrix forward_adapted(const AdaptedModel& model, const Matrix& input);

// Adapter checkpoint: CORD1 files {layer}.B, {layer}.A, {layer}.residual
// plus a JSON manifest {mode, r_per_layer, nonlinearity}.
void save_adapters(const AdaptedModel& model,
                   const std::filesystem::path& dir);
AdaptedModel load_adapters(const std::filesystem::path& dir);

}  // namespace corda
