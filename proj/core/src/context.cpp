// SPDX-License-Identifier: Apache-2.0
#include "corda/context.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "corda/rng.hpp"

namespace corda {

std::vector<CovarianceStats> accumulate_covariance(
    const ModelState& model, const std::vector<Matrix>& batches) {
  if (batches.empty()) {
    throw MethodError("accumulate_covariance: no batches");
  }
  validate_model(model);

  std::vector<Eigen::MatrixXd> acc;
  acc.reserve(model.layers.size());
  for (const auto& layer : model.layers) {
    acc.emplace_back(Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(layer.d_in()),
        static_cast<Eigen::Index>(layer.d_in())));
  }

  std::size_t token_count = 0;
  for (const auto& batch : batches) {
    auto [output, captures] = forward_with_capture(model, batch);
    (void)output;
    token_count += batch.cols();
    for (std::size_t l = 0; l < captures.size(); ++l) {
      const Matrix& x = captures[l].x;
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          xm(x.data(), static_cast<Eigen::Index>(x.rows()),
             static_cast<Eigen::Index>(x.cols()));
      // Lower triangle only; mirrored below so C is exactly symmetric.
      acc[l].selfadjointView<Eigen::Lower>().rankUpdate(xm, 1.0);
    }
  }

  std::vector<CovarianceStats> out;
  out.reserve(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::size_t d = model.layers[l].d_in();
    Matrix c(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const double v = acc[l](static_cast<Eigen::Index>(i),
                                static_cast<Eigen::Index>(j));
        c(i, j) = v;
        c(j, i) = v;
      }
    }
    out.push_back({model.layers[l].name, std::move(c), token_count, 0});
  }
  return out;
}

CandidateTable sample_rounds(const SamplingPlan& plan,
                             const SampleSource& source,
                             const ModelState& model) {
  if (plan.n_rounds == 0) throw MethodError("sample_rounds: n_rounds == 0");
  if (source.sample_count() < plan.samples_per_round) {
    throw MethodError("sample_rounds: dataset yields " +
                      std::to_string(source.sample_count()) +
                      " samples, need " +
                      std::to_string(plan.samples_per_round) + " per round");
  }

  CandidateTable table(model.layers.size());
  for (std::size_t round = 0; round < plan.n_rounds; ++round) {
    // Partial Fisher-Yates: samples_per_round distinct indices per round.
    std::vector<std::size_t> indices(source.sample_count());
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(mix_seed(plan.seed, round));
    std::vector<Matrix> batches;
    batches.reserve(plan.samples_per_round);
    for (std::size_t k = 0; k < plan.samples_per_round; ++k) {
      const std::size_t pick = k + rng.index(indices.size() - k);
      std::swap(indices[k], indices[pick]);
      batches.push_back(source.sample(indices[k]));
    }
    auto stats = accumulate_covariance(model, batches);
    for (std::size_t l = 0; l < stats.size(); ++l) {
      stats[l].round_index = round;
      table[l].push_back(std::move(stats[l]));
    }
  }
  return table;
}

Matrix covariance_heatmap(const CovarianceStats& cov, std::size_t grid) {
  const std::size_t d = cov.c.rows();
  if (grid == 0 || grid > d) {
    throw MethodError("covariance_heatmap: grid " + std::to_string(grid) +
                      " out of range for d_in " + std::to_string(d));
  }
  const auto edge = [&](std::size_t b) { return b * d / grid; };
  Matrix out(grid, grid);
  for (std::size_t bi = 0; bi < grid; ++bi) {
    for (std::size_t bj = 0; bj < grid; ++bj) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = edge(bi); i < edge(bi + 1); ++i) {
        for (std::size_t j = edge(bj); j < edge(bj + 1); ++j) {
          sum += std::abs(cov.c(i, j));
          ++count;
        }
      }
      out(bi, bj) = sum / static_cast<double>(count);
    }
  }
  return out;
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

}  // namespace corda
