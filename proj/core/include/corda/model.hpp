// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "corda/matrix.hpp"

namespace corda {

enum class Nonlinearity { kTanh, kRelu, kIdentity };

std::string to_string(Nonlinearity nl);
Nonlinearity nonlinearity_from_string(const std::string& s);

// One dense layer y = W·x with W of shape d_out×d_in.
struct LinearLayer {
  std::string name;
  Matrix weight;

  std::size_t d_in() const { return weight.cols(); }
  std::size_t d_out() const { return weight.rows(); }
};

// A stack of linear layers with an elementwise nonlinearity applied
// between layers (not after the last). Immutable once built; forward
// passes are pure.
struct ModelState {
  std::vector<LinearLayer> layers;
  Nonlinearity nonlinearity = Nonlinearity::kTanh;
};

// Throws MethodError naming the offending layers on a dimension break.
void validate_model(const ModelState& model);

// Input activation captured in front of one layer's matmul; x is
// d_in × T where T counts token columns.
struct ActivationBatch {
  std::string layer_name;
  Matrix x;
};

Matrix apply_nonlinearity(Nonlinearity nl, Matrix m);
// Elementwise derivative evaluated from the post-activation value.
Matrix nonlinearity_grad(Nonlinearity nl, const Matrix& post);

Matrix forward(const ModelState& model, const Matrix& input);

// Same arithmetic as forward, additionally returning the exact input
// each layer's matmul saw. Output is bitwise identical to forward().
std::pair<Matrix, std::vector<ActivationBatch>> forward_with_capture(
    const ModelState& model, const Matrix& input);

// Desk-scale default: layers 32×24, 48×32, 16×48, tanh, weights drawn
// from seeded uniform(−1/√d_in, 1/√d_in).
ModelState make_default_model(std::uint64_t seed);

ModelState make_model(const std::vector<std::pair<std::size_t, std::size_t>>&
                          layer_dims,  // (d_out, d_in) per layer
                      Nonlinearity nl, std::uint64_t seed);

// Checkpoint: directory of CORD1 matrices named layer{k}.weight plus a
// JSON manifest {layers: [{name, d_in, d_out}], nonlinearity}.
void save_checkpoint(const ModelState& model,
                     const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);

}  // namespace corda
