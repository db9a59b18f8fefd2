#include <benchmark/benchmark.h>

#include "rtaformer/fusion.hpp"
#include "rtaformer/model.hpp"
#include "rtaformer/training.hpp"

using namespace rtaformer;

namespace {

void BM_TinyForward(benchmark::State& state) {
  torch::set_num_threads(1);
  ModelConfig c;
  c.variant = static_cast<Variant>(state.range(1));
  c.image_size = state.range(0);
  auto model = build(c);
  model->eval();
  torch::NoGradGuard g;
  auto x = torch::randn({1, 3, state.range(0), state.range(0)});
  for (auto _ : state) benchmark::DoNotOptimize(model(x));
  state.SetLabel(to_string(c.variant));
}

void BM_FastFusion(benchmark::State& state) {
  FastFusion f(state.range(0));
  std::vector<torch::Tensor> xs;
  for (int64_t i = 0; i < state.range(0); ++i) xs.push_back(torch::randn({4, 64, 44, 44}));
  torch::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(f(xs));
}

void BM_StructureLoss(benchmark::State& state) {
  const int64_t s = state.range(0);
  auto logits = torch::randn({8, 1, s, s});
  auto gt = (torch::rand({8, 1, s, s}) > 0.7).to(torch::kFloat32);
  for (auto _ : state) benchmark::DoNotOptimize(structure_loss(logits, gt));
}

void BM_DiceIou(benchmark::State& state) {
  auto a = (torch::rand({1, 352, 352}) > 0.5).to(torch::kFloat32);
  auto b = (torch::rand({1, 352, 352}) > 0.5).to(torch::kFloat32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dice(a, b));
    benchmark::DoNotOptimize(iou(a, b));
  }
}

}  // namespace

BENCHMARK(BM_TinyForward)->ArgsProduct({{64, 352}, {0, 3}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FastFusion)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_StructureLoss)->Arg(88)->Arg(352)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DiceIou)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
