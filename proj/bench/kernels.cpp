#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "mtcs/estimator.hpp"
#include "mtcs/rng.hpp"
#include "mtcs/source.hpp"

namespace {

mtcs::SourceSpec chain_spec() {
  mtcs::SourceSpec spec;
  spec.mixing.resize(2, 3);
  spec.mixing << 1, 1, 0, 0, 1, 1;
  spec.alphas.resize(3);
  spec.alphas << 0.2, 0.3, 0.2;
  return spec;
}

Eigen::MatrixXd noisy_observations(const mtcs::SourceSpec& spec, Eigen::Index n) {
  Eigen::MatrixXd obs = mtcs::sample_source(spec, n, 7);
  mtcs::RandomStream noise(7, mtcs::StreamTag::kStreamOracle, {0});
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index o = 0; o < obs.rows(); ++o) {
      obs(o, j) += 0.2 * noise.gaussian_at(static_cast<std::uint64_t>(j * obs.rows() + o));
    }
  }
  return obs;
}

void bm_denoise_parallel(benchmark::State& state) {
  const auto spec = chain_spec();
  const Eigen::MatrixXd obs = noisy_observations(spec, state.range(0));
  const auto noise = mtcs::NoiseModel::diagonal(Eigen::Vector2d(0.04, 0.04));
  for (auto _ : state) {
    auto dr = mtcs::denoise(spec, noise, obs);
    benchmark::DoNotOptimize(dr.estimates.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_denoise_serial(benchmark::State& state) {
  const auto spec = chain_spec();
  const Eigen::MatrixXd obs = noisy_observations(spec, state.range(0));
  const auto noise = mtcs::NoiseModel::diagonal(Eigen::Vector2d(0.04, 0.04));
  for (auto _ : state) {
    auto dr = mtcs::denoise_serial(spec, noise, obs);
    benchmark::DoNotOptimize(dr.estimates.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_mmse_parallel(benchmark::State& state) {
  const auto spec = chain_spec();
  mtcs::MmseSampler sampler(spec, state.range(0), 11);
  Eigen::VectorXd precisions(2);
  precisions << 4.0, 2.5;
  for (auto _ : state) {
    Eigen::VectorXd m = sampler.mmse(precisions);
    benchmark::DoNotOptimize(m.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_mmse_serial(benchmark::State& state) {
  const auto spec = chain_spec();
  mtcs::MmseSampler sampler(spec, state.range(0), 11);
  Eigen::VectorXd precisions(2);
  precisions << 4.0, 2.5;
  for (auto _ : state) {
    Eigen::VectorXd m = sampler.mmse_serial(precisions);
    benchmark::DoNotOptimize(m.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(bm_denoise_parallel)->Arg(4096)->Arg(65536);
BENCHMARK(bm_denoise_serial)->Arg(4096)->Arg(65536);
BENCHMARK(bm_mmse_parallel)->Arg(100000)->Arg(1000000);
BENCHMARK(bm_mmse_serial)->Arg(100000)->Arg(1000000);

BENCHMARK_MAIN();
