// Serial reference versus OpenMP path for the hot kernels. Arg(0) is the
// serial path, Arg(1) the parallel one.

#include <benchmark/benchmark.h>

#include "fisherpde/gaussian.hpp"
#include "fisherpde/infoop.hpp"
#include "fisherpde/rng.hpp"

using namespace fisherpde;

namespace {

Execution mode(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::serial : Execution::parallel;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

void BM_GramUpdate(benchmark::State& state) {
  const int K = static_cast<int>(state.range(1));
  Rng rng(1);
  Eigen::MatrixXd rows(4 * K, K);
  for (int i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(K, K);
  for (auto _ : state) {
    infoop::gram_update(rows, 0.5, gram, mode(state));
    benchmark::DoNotOptimize(gram.data());
  }
  label(state);
}
BENCHMARK(BM_GramUpdate)->ArgsProduct({{0, 1}, {64, 256}})->Unit(benchmark::kMicrosecond);

void BM_PropagateTangents(benchmark::State& state) {
  const forward::ReactionDiffusionModel rd{};
  const auto theta0 = forward::default_base_state(rd);
  const int K = static_cast<int>(state.range(1));
  const auto es = infoop::parameter_basis(rd, K);
  const auto grid = forward::solver_grid(rd, es.required_wavenumber());
  std::vector<spectral::FourierCoeffs> dirs;
  for (int j = 0; j < K; ++j) dirs.push_back(es.basis_vector(j, grid));
  const auto times = forward::time_grid(rd, grid);
  for (auto _ : state) {
    double sink = 0.0;
    forward::propagate(rd, theta0, dirs, times, [&](const forward::NodeView& v) { sink += v.tangents[0].max_abs(); },
                       mode(state));
    benchmark::DoNotOptimize(sink);
  }
  label(state);
}
BENCHMARK(BM_PropagateTangents)->ArgsProduct({{0, 1}, {16, 32}})->Unit(benchmark::kMillisecond);

void BM_InformationMatrix(benchmark::State& state) {
  const forward::ReactionDiffusionModel rd{};
  const auto theta0 = forward::default_base_state(rd);
  const auto fisher = noise::fisher_matrix(noise::NoiseModel::gaussian(1.0));
  const auto design = infoop::DesignMeasure::uniform(1.0, 1);
  infoop::AssemblyOptions opt;
  opt.exec = mode(state);
  for (auto _ : state) {
    auto M = infoop::assemble_information_matrix(rd, theta0, fisher, design, static_cast<int>(state.range(1)), opt);
    benchmark::DoNotOptimize(M.matrix().data());
  }
  label(state);
}
BENCHMARK(BM_InformationMatrix)->ArgsProduct({{0, 1}, {32}})->Unit(benchmark::kMillisecond);

void BM_SampleGaussian(benchmark::State& state) {
  const forward::HeatModel heat{1, 1.0, {}};
  const auto M = infoop::assemble_information_matrix(heat, forward::default_base_state(heat),
                                                     noise::fisher_matrix(noise::NoiseModel::gaussian(1.0)),
                                                     infoop::DesignMeasure::uniform(1.0, 1), 128);
  for (auto _ : state) {
    auto b = gaussian::sample_efficient_gaussian(M, 2000, 3, mode(state));
    benchmark::DoNotOptimize(b.samples.data());
  }
  label(state);
}
BENCHMARK(BM_SampleGaussian)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
