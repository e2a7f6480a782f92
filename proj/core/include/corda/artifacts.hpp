// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "corda/harness.hpp"

namespace corda {

// Covariance candidates: {layer}.round{k}.cov CORD1 files plus a
// manifest recording layers, round count and token counts.
void save_candidates(const CandidateTable& table,
                     const std::filesystem::path& dir);
CandidateTable load_candidates(const std::filesystem::path& dir);

// selection.json: chosen round per layer.
void save_selection(const SelectionResult& sel,
                    const std::filesystem::path& dir);
std::vector<std::size_t> load_selection(const std::filesystem::path& dir);

// cov_scores.csv: layer,round,pi,cov_score
void write_selection_csv(const std::vector<ScoreRecord>& table,
                         const std::filesystem::path& path);

// Decomposition directory: per layer {name}.u, {name}.sigma (R×1),
// {name}.vt_cinv, {name}.c_reg, plus manifest.json with the inversion
// record.
void save_decompositions(const std::vector<Decomposition>& decomps,
                         const std::filesystem::path& dir);
std::vector<Decomposition> load_decompositions(
    const std::filesystem::path& dir);

// alloc.json: mode, budget, realized, r_per_layer.
void save_allocation(const RankAllocation& alloc,
                     const std::filesystem::path& path);
RankAllocation load_allocation(const std::filesystem::path& path);

// alloc_trace.csv: step,layer,r,score
void write_allocation_csv(const std::vector<AllocationStep>& trace,
                          const std::filesystem::path& path);

// report.json plus per-arm loss traces as trace_{arm}.csv and the
// pretraining trace as pretrain_trace.csv.
void save_report(const ExperimentReport& report,
                 const std::filesystem::path& dir);
ExperimentReport load_report(const std::filesystem::path& dir);

// compactness.csv: ratio plus one loss column per sweep method.
void write_compactness_csv(const CompactnessCurves& curves,
                           const std::filesystem::path& path);

}  // namespace corda
