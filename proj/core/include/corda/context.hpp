// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "corda/model.hpp"

namespace corda {

// Accumulated input covariance C = Σ_b X_b·X_bᵀ for one layer.
// Symmetric positive semi-definite by construction.
struct CovarianceStats {
  std::string layer_name;
  Matrix c;
  std::size_t token_count = 0;
  std::size_t round_index = 0;
};

// Seeded multi-round sampling plan; n_rounds is the candidate count N.
struct SamplingPlan {
  std::size_t n_rounds = 5;
  std::size_t samples_per_round = 256;
  std::uint64_t seed = 0;
};

// Anything able to yield deterministic input batches by index.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t sample_count() const = 0;
  virtual Matrix sample(std::size_t index) const = 0;  // d_in × T
};

// One CovarianceStats per model layer; batches accumulated left to
// right so the result is deterministic.
std::vector<CovarianceStats> accumulate_covariance(
    const ModelState& model, const std::vector<Matrix>& batches);

// candidates[layer][round]
using CandidateTable = std::vector<std::vector<CovarianceStats>>;

// Draws plan.n_rounds batches of samples_per_round samples (without
// replacement within a round, rounds seeded independently from
// plan.seed) and accumulates one covariance candidate per layer per
// round.
CandidateTable sample_rounds(const SamplingPlan& plan,
                             const SampleSource& source,
                             const ModelState& model);

// Block-mean downsampling of |c| to grid×grid (grid ≤ d_in).
Matrix covariance_heatmap(const CovarianceStats& cov, std::size_t grid);

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);

}  // namespace corda
