// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "corda/adapters.hpp"
#include "corda/cosvd.hpp"
#include "corda/quant.hpp"
#include "corda/rng.hpp"

using namespace corda;

namespace {

CovarianceStats make_cov(std::size_t d, std::uint64_t seed) {
  const Matrix x = random_normal_matrix(d, 2 * d, seed);
  CovarianceStats cov;
  cov.layer_name = "bench";
  cov.c = x * x.transposed();
  return cov;
}

void BM_Svd(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix m = random_normal_matrix(d, d, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(svd(m));
  }
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(32)->Arg(64);

void BM_RegularizedInverse(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  // rank-deficient, so the doubling loop actually runs
  const Matrix x = random_normal_matrix(d, d / 2, 9);
  const Matrix c = x * x.transposed();
  const double threshold = default_inverse_threshold(d);
  for (auto _ : state) {
    benchmark::DoNotOptimize(regularized_inverse(c, threshold));
  }
}
BENCHMARK(BM_RegularizedInverse)->Arg(32)->Arg(64);

void BM_CoSvd(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_normal_matrix(d, d, 11);
  const CovarianceStats cov = make_cov(d, 12);
  for (auto _ : state) {
    benchmark::DoNotOptimize(co_svd(w, cov));
  }
}
BENCHMARK(BM_CoSvd)->Arg(16)->Arg(32)->Arg(64);

void BM_CovarianceScore(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_normal_matrix(d, d, 13);
  const CovarianceStats cov = make_cov(d, 14);
  for (auto _ : state) {
    benchmark::DoNotOptimize(covariance_score(w, cov));
  }
}
BENCHMARK(BM_CovarianceScore)->Arg(32)->Arg(64);

void BM_AllocateRanks(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  std::vector<Decomposition> decomps;
  std::vector<double> pis;
  Rng rng(15);
  std::size_t budget = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    Decomposition d;
    d.layer_name = "layer" + std::to_string(l);
    d.rank = 64;
    d.u = Matrix::identity(64);
    d.vt_cinv = Matrix::identity(64);
    double v = 100.0;
    for (std::size_t i = 0; i < 64; ++i) {
      d.sigma.push_back(v);
      v *= 0.8 + 0.15 * rng.uniform();
    }
    decomps.push_back(std::move(d));
    pis.push_back(2.0 + 10.0 * rng.uniform());
    budget += 128 * 16;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        allocate_ranks(decomps, pis, budget, AdaptMode::kKpm));
  }
}
BENCHMARK(BM_AllocateRanks)->Arg(3)->Arg(12);

void BM_Nf4RoundTrip(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix m = random_normal_matrix(d, d, 17);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nf4_dequantize(nf4_quantize(m, 64)));
  }
}
BENCHMARK(BM_Nf4RoundTrip)->Arg(64)->Arg(256);

void BM_AdapterInit(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_normal_matrix(d, d, 19);
  const Decomposition decomp = co_svd(w, make_cov(d, 20));
  for (auto _ : state) {
    benchmark::DoNotOptimize(make_residual(w, init_kpm(decomp, d / 4)));
  }
}
BENCHMARK(BM_AdapterInit)->Arg(32)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
