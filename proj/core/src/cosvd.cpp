// SPDX-License-Identifier: Apache-2.0
#include "corda/cosvd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace corda {

namespace {

// Σ over i in [lo, hi) of sigma_i · u_i · v̂ᵢᵀ.
Matrix triple_sum(const Decomposition& d, std::size_t lo, std::size_t hi) {
  Matrix out(d.d_out(), d.d_in());
  for (std::size_t i = lo; i < hi; ++i) {
    const double s = d.sigma[i];
    for (std::size_t row = 0; row < d.d_out(); ++row) {
      const double scaled = s * d.u(row, i);
      if (scaled == 0.0) continue;
      for (std::size_t col = 0; col < d.d_in(); ++col) {
        out(row, col) += scaled * d.vt_cinv(i, col);
      }
    }
  }
  return out;
}

struct CovScoreParts {
  double pi = 0.0;
  double score = 0.0;
};

CovScoreParts covariance_score_parts(const Matrix& w,
                                     const CovarianceStats& cov,
                                     const InverseOptions& inv) {
  const double pi = pi_metric(cov, w.rows(), inv);
  const auto reg =
      regularized_inverse(cov.c, inv.threshold_for(cov.c.rows()), inv.c0);
  const auto spectrum = singular_values(w * reg.c_reg);
  const double sigma_max = spectrum.empty() ? 0.0 : spectrum.front();
  if (!(sigma_max > 0.0)) {
    throw MethodError("covariance_score: degenerate layer " + cov.layer_name +
                      ", all-zero spectrum");
  }
  double sum = 0.0;
  for (double s : spectrum) sum += s / sigma_max;
  return {pi, std::log(pi) * sum};
}

}  // namespace

Decomposition co_svd(const Matrix& w, const CovarianceStats& cov,
                     const InverseOptions& inv) {
  if (cov.c.rows() != w.cols()) {
    throw MethodError("co_svd: layer " + cov.layer_name + " covariance side " +
                      std::to_string(cov.c.rows()) + " vs weight cols " +
                      std::to_string(w.cols()));
  }
  Decomposition d;
  d.layer_name = cov.layer_name;
  try {
    d.reg =
        regularized_inverse(cov.c, inv.threshold_for(cov.c.rows()), inv.c0);
    const SvdResult s = svd(w * d.reg.c_reg);
    d.rank = std::min(w.rows(), w.cols());
    d.u = s.u;
    d.sigma = s.sigma;
    const Matrix full = s.vt * d.reg.c_inv;  // d_in × d_in
    d.vt_cinv = Matrix(d.rank, w.cols());
    for (std::size_t i = 0; i < d.rank; ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        d.vt_cinv(i, j) = full(i, j);
      }
    }
  } catch (const MethodError& e) {
    throw MethodError("co_svd: layer " + cov.layer_name + ": " + e.what());
  }
  return d;
}

Matrix reconstruct(const Decomposition& d) {
  return triple_sum(d, 0, d.rank);
}

Matrix truncate_bottom(const Decomposition& d, std::size_t r) {
  if (r < 1 || r > d.rank - 1) {
    throw MethodError("truncate_bottom: layer " + d.layer_name + ", r = " +
                      std::to_string(r) + " outside [1, " +
                      std::to_string(d.rank - 1) + "]");
  }
  return triple_sum(d, 0, d.rank - r);
}

double pi_metric(const CovarianceStats& cov, std::size_t d_out,
                 const InverseOptions& inv) {
  const auto reg =
      regularized_inverse(cov.c, inv.threshold_for(cov.c.rows()), inv.c0);
  const auto eigs = symmetric_eigenvalues(reg.c_reg);
  const double sigma_max = eigs.front();
  const double sigma_min = eigs.back();
  if (!(sigma_min > 0.0)) {
    throw MethodError("pi_metric: layer " + cov.layer_name +
                      " covariance spectrum not positive after "
                      "regularization");
  }
  return std::sqrt(static_cast<double>(d_out) * sigma_max) / sigma_min;
}

double covariance_score(const Matrix& w, const CovarianceStats& cov,
                        const InverseOptions& inv) {
  return covariance_score_parts(w, cov, inv).score;
}

SelectionResult select_covariances(const std::vector<Matrix>& weights,
                                   const CandidateTable& candidates,
                                   const InverseOptions& inv) {
  if (weights.size() != candidates.size()) {
    throw MethodError("select_covariances: " + std::to_string(weights.size()) +
                      " weights vs " + std::to_string(candidates.size()) +
                      " candidate rows");
  }
  if (candidates.empty() || candidates.front().empty()) {
    throw MethodError("select_covariances: empty candidate table");
  }
  const std::size_t n_rounds = candidates.front().size();
  for (const auto& row : candidates) {
    if (row.size() != n_rounds) {
      throw MethodError("select_covariances: uneven candidate counts");
    }
  }

  SelectionResult result;
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_rounds; ++i) {
      const auto parts =
          covariance_score_parts(weights[l], candidates[l][i], inv);
      result.table.push_back({candidates[l][i].layer_name,
                              candidates[l][i].round_index, parts.pi,
                              parts.score,
                              {}});
      if (parts.score < best_score) {  // strict: ties keep lowest round
        best_score = parts.score;
        best = i;
      }
    }
    result.chosen_round.push_back(candidates[l][best].round_index);
    result.selected.push_back(candidates[l][best]);
  }
  return result;
}

double rank_alloc_score(const std::vector<double>& sigma, std::size_t r,
                        double pi) {
  const std::size_t rank = sigma.size();
  if (r < 1 || r > rank - 1) {
    throw MethodError("rank_alloc_score: r = " + std::to_string(r) +
                      " outside [1, " + std::to_string(rank - 1) + "]");
  }
  double head = 0.0;
  for (std::size_t k = 0; k < rank - r; ++k) head += sigma[k];
  if (!(head > 0.0)) {
    throw MethodError("rank_alloc_score: degenerate spectrum, head sum <= 0");
  }
  return std::log(pi) * sigma[rank - r] / head;
}

std::string to_string(AdaptMode mode) {
  return mode == AdaptMode::kKpm ? "kpm" : "ipm";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "kpm") return AdaptMode::kKpm;
  if (s == "ipm") return AdaptMode::kIpm;
  throw IoError("unknown adaptation mode: " + s);
}

RankAllocation allocate_ranks(const std::vector<Decomposition>& decomps,
                              const std::vector<double>& pis,
                              std::size_t budget, AdaptMode mode,
                              std::vector<AllocationStep>* trace) {
  if (decomps.empty()) throw MethodError("allocate_ranks: no layers");
  if (pis.size() != decomps.size()) {
    throw MethodError("allocate_ranks: pi count mismatch");
  }
  const std::size_t n = decomps.size();
  std::vector<std::size_t> dims(n), ranks(n), r(n, 1);
  std::size_t min_cost = 0;   // Σ dims·1
  std::size_t max_trunc = 0;  // Σ dims·(R−1)
  for (std::size_t l = 0; l < n; ++l) {
    dims[l] = decomps[l].d_in() + decomps[l].d_out();
    ranks[l] = decomps[l].rank;
    if (ranks[l] < 2) {
      throw MethodError("allocate_ranks: layer " + decomps[l].layer_name +
                        " has rank < 2");
    }
    min_cost += dims[l];
    max_trunc += dims[l] * (ranks[l] - 1);
  }
  if (budget < min_cost) {
    throw MethodError("allocate_ranks: budget " + std::to_string(budget) +
                      " below minimum " + std::to_string(min_cost));
  }
  if (mode == AdaptMode::kIpm && budget >= max_trunc) {
    throw MethodError("allocate_ranks: ipm budget " + std::to_string(budget) +
                      " not below full-head cost " +
                      std::to_string(max_trunc));
  }

  const auto cost = [&] {
    std::size_t total = 0;
    for (std::size_t l = 0; l < n; ++l) {
      total += dims[l] * (mode == AdaptMode::kKpm ? r[l] : ranks[l] - r[l]);
    }
    return total;
  };

  RankAllocation out;
  out.mode = mode;
  out.budget = budget;
  for (std::size_t step = 1;; ++step) {
    std::size_t pick = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < n; ++l) {
      if (r[l] >= ranks[l] - 1) continue;  // capped
      const double s = rank_alloc_score(decomps[l].sigma, r[l], pis[l]);
      if (s < best) {  // strict: ties keep lowest layer index
        best = s;
        pick = l;
      }
    }
    if (pick == n) {
      throw MethodError("allocate_ranks: all layers capped before budget " +
                        std::to_string(budget) + " was met");
    }
    ++r[pick];
    if (trace) {
      trace->push_back({step, decomps[pick].layer_name, r[pick], best});
    }
    const std::size_t realized = cost();
    if (mode == AdaptMode::kKpm) {
      if (realized > budget) {
        --r[pick];  // revert the overshooting increment
        break;
      }
    } else {
      if (realized < budget) break;
    }
  }

  out.realized = cost();
  for (std::size_t l = 0; l < n; ++l) {
    out.r_per_layer[decomps[l].layer_name] = r[l];
  }
  return out;
}

}  // namespace corda
