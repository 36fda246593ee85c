#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "reclab/evalkit.hpp"
#include "reclab/imgproc.hpp"
#include "reclab/nn/encoder.hpp"
#include "reclab/tirr.hpp"

using namespace reclab;

static void BM_EncoderForward(benchmark::State& state) {
  const auto spec = nn::EncoderSpec::face_encoder();
  nn::Encoder<float> enc(spec);
  enc.initialize(1);
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  nn::Matrix<float> images = nn::Matrix<float>::Random(spec.input.size(), batch).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(images, nn::Mode::Infer));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_TirrForward(benchmark::State& state) {
  TirrNet net;
  net.initialize(2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<DirectedInput> inputs(static_cast<std::size_t>(state.range(0)));
  for (auto& d : inputs) {
    std::vector<Vec128> steps(kHistoryCap);
    for (auto& s : steps)
      for (auto& v : s) v = n(rng);
    d.history = pad_and_mask(steps);
    for (auto& v : d.candidate) v = n(rng);
  }
  std::vector<const DirectedInput*> ptrs;
  for (const auto& d : inputs) ptrs.push_back(&d);
  const auto batch = net.batch(ptrs);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(batch, nn::Mode::Infer));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TirrForward)->Arg(1)->Arg(256);

static void BM_RocAuc(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  std::vector<ScoredPair> pairs;
  for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(state.range(0)); ++i)
    pairs.push_back({{Side::X, i}, {Side::Y, i}, u(rng), static_cast<int>(i % 2)});
  for (auto _ : state) benchmark::DoNotOptimize(roc_and_auc(pairs).auc);
}
BENCHMARK(BM_RocAuc)->Arg(10000);
BENCHMARK_MAIN();
