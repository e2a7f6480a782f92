// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "corda/context.hpp"
#include "corda/linalg.hpp"

namespace corda {

// Context-oriented SVD of one layer: svd(W·C_reg) with the right factor
// folded through C⁻¹ so that Σᵢ σᵢ uᵢ v̂ᵢᵀ reproduces W.
struct Decomposition {
  std::string layer_name;
  Matrix u;                   // d_out × d_out, orthogonal
  std::vector<double> sigma;  // length R, descending
  Matrix vt_cinv;             // R × d_in, row i is v̂ᵢᵀ = (Vᵀ·C⁻¹)ᵢ
  RegularizedInverse reg;
  std::size_t rank = 0;  // R = min(d_out, d_in)

  std::size_t d_out() const { return u.rows(); }
  std::size_t d_in() const { return vt_cinv.cols(); }
};

Decomposition co_svd(const Matrix& w, const CovarianceStats& cov,
                     const InverseOptions& inv = {});

// Ŵ = Σ_{i=1}^{R} σᵢ uᵢ v̂ᵢᵀ; matches W to ~‖W‖·residual of the inverse.
Matrix reconstruct(const Decomposition& d);

// Σ_{i=1}^{R−r} σᵢ uᵢ v̂ᵢᵀ: drops the r smallest triples; 1 ≤ r ≤ R−1.
Matrix truncate_bottom(const Decomposition& d, std::size_t r);

// π(C) = √(d_out·σ_max(C_reg)) / σ_min(C_reg), the conditioning factor
// of the truncation bound. Always computed on the regularized C.
double pi_metric(const CovarianceStats& cov, std::size_t d_out,
                 const InverseOptions& inv = {});

// Covariance selection score s(C) = log(π(C)) · Σ_{r=1}^{R} σ₋ᵣ/σ_max,
// where the σ are singular values of W·C_reg. Lower is more compact.
double covariance_score(const Matrix& w, const CovarianceStats& cov,
                        const InverseOptions& inv = {});

// One row of the selection/allocation score tables.
struct ScoreRecord {
  std::string layer_name;
  std::size_t round_index = 0;
  double pi = 0.0;
  double cov_score = 0.0;
  std::vector<double> rank_scores;
};

struct SelectionResult {
  std::vector<std::size_t> chosen_round;  // per layer
  std::vector<CovarianceStats> selected;  // per layer
  std::vector<ScoreRecord> table;         // layer-major, round-minor
};

// Per layer, picks the candidate covariance with the lowest selection
// score; ties broken by lowest round index.
SelectionResult select_covariances(const std::vector<Matrix>& weights,
                                   const CandidateTable& candidates,
                                   const InverseOptions& inv = {});

// Rank allocation score at truncating position r (1 ≤ r ≤ R−1):
// s = log(π) · σ₋ᵣ / Σ_{k=1}^{R−r} σₖ. Lower means the current tail
// rank is cheaper to filter.
double rank_alloc_score(const std::vector<double>& sigma, std::size_t r,
                        double pi);

enum class AdaptMode { kKpm, kIpm };
std::string to_string(AdaptMode mode);
AdaptMode adapt_mode_from_string(const std::string& s);

// Truncating positions chosen by the greedy filter, with the realized
// adapter parameter cost. In KPM the filtered (bottom) components back
// the adapters, so cost = Σ (d_in+d_out)·r; in IPM the remaining head
// does, so cost = Σ (d_in+d_out)·(R−r).
struct RankAllocation {
  AdaptMode mode = AdaptMode::kKpm;
  std::map<std::string, std::size_t> r_per_layer;
  std::size_t budget = 0;    // τ
  std::size_t realized = 0;  // τ′
};

struct AllocationStep {
  std::size_t step = 0;
  std::string layer_name;
  std::size_t r = 0;  // truncating position after this increment
  double score = 0.0;
};

// Greedy loop: each step filters one more rank at the layer with the
// globally smallest score (ties → lowest layer index); capped layers
// (r = R−1) drop out. KPM stops at the last state with τ′ ≤ τ (the
// overshooting increment is reverted); IPM stops at the first state
// with τ′ < τ. The trace records every argmin step taken, including a
// final reverted KPM step.
RankAllocation allocate_ranks(const std::vector<Decomposition>& decomps,
                              const std::vector<double>& pis,
                              std::size_t budget, AdaptMode mode,
                              std::vector<AllocationStep>* trace = nullptr);

}  // namespace corda
