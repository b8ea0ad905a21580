#include <benchmark/benchmark.h>

#include "stmbr/autograd.hpp"
#include "stmbr/model.hpp"
#include "stmbr/train.hpp"

using namespace stmbr;

namespace {

template <typename T>
Tensor<T> rand_t(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = rand_t<float>({16, c, 64, 64}, 1);
  auto k = rand_t<float>({c, c, 3, 3}, 2);
  auto b = rand_t<float>({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, 1, 1, same_pad(3, 3, 1)));
  state.SetItemsProcessed(state.iterations() * 16LL * c * c * 64 * 64 * 9 * 2);
}
BENCHMARK(BM_Conv3x3Forward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = rand_t<float>({16, c, 64, 64}, 1);
  auto k = rand_t<float>({c, c, 3, 3}, 2);
  auto g = rand_t<float>({16, c, 64, 64}, 4);
  for (auto _ : state) {
    Tensor<float> gx, gk, gb;
    conv2d_backward(x, k, 1, 1, same_pad(3, 3, 1), g, &gx, &gk, &gb);
    benchmark::DoNotOptimize(gx);
  }
  state.SetItemsProcessed(state.iterations() * 16LL * c * c * 64 * 64 * 9 * 4);
}
BENCHMARK(BM_Conv3x3Backward)->Arg(8)->Arg(16)->Arg(32);

void BM_MaxPool(benchmark::State& state) {
  auto x = rand_t<float>({16, 32, 64, 64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(pool2d(x, 2, 2, PoolMode::kMax));
}
BENCHMARK(BM_MaxPool);

void BM_DetectorStep(benchmark::State& state) {
  ModelConfig cfg;
  RngStreams streams(1);
  AuxNet<float> aux(1, cfg.cp1(), cfg.cp2(), 2, streams.init);
  aux.trained = true;
  StmBrNet<float> model(cfg, streams.init);
  SgdOptimizer<float> opt(1e-4, 0.95);
  auto x = rand_t<float>({16, 1, 64, 64}, 6);
  std::vector<int> labels(16);
  for (int i = 0; i < 16; ++i) labels[static_cast<size_t>(i)] = i % 2;
  for (auto _ : state) {
    model.reg.zero_grads();
    auto fwd = model.forward(constant(x), aux, true, &streams.dropout);
    auto loss = vcross_entropy(fwd.probs, labels);
    backward(loss);
    opt.step(model.reg);
    benchmark::DoNotOptimize(loss->value.data[0]);
  }
}
BENCHMARK(BM_DetectorStep)->Unit(benchmark::kMillisecond);

void BM_SegmenterStep(benchmark::State& state) {
  ModelConfig cfg;
  RngStreams streams(2);
  AuxNet<float> aux(1, 8, 16, 2, streams.init);
  aux.trained = true;
  SaCbBrSeg<float> model(cfg, &aux, streams.init);
  SgdOptimizer<float> opt(1e-4, 0.95);
  auto x = rand_t<float>({16, 1, 64, 64}, 7);
  Tensor<uint8_t> masks({16, 64, 64});
  Rng mrng(8);
  for (auto& v : masks.data) v = mrng.uniform() < 0.05;
  for (auto _ : state) {
    model.reg.zero_grads();
    auto probs = model.forward(constant(x), &aux);
    auto loss = vcross_entropy_pixels(probs, masks);
    backward(loss);
    opt.step(model.reg);
    benchmark::DoNotOptimize(loss->value.data[0]);
  }
}
BENCHMARK(BM_SegmenterStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
