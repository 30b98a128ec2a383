#include <benchmark/benchmark.h>

#include <random>

#include "msff/model.hpp"
#include "msff/training.hpp"

namespace {

using namespace msff;

Volume<float> random_volume(int c, int h, int w) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume<float> v(c, h, w);
  for (auto& x : v.values()) x = u(rng);
  return v;
}

void BM_Conv3x3(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  const auto x = random_volume(channels, size, size);
  nn::Parameter<float> w{{channels, channels, 3, 3},
                         std::vector<float>(static_cast<std::size_t>(channels) * channels * 9, 0.01f)};
  nn::Parameter<float> b{{channels}, std::vector<float>(channels, 0.0f)};
  for (auto _ : state) benchmark::DoNotOptimize(nn::kernels::conv2d(x, w, b, 1));
  state.SetItemsProcessed(state.iterations() * 2LL * channels * channels * 9 * size * size);
}
BENCHMARK(BM_Conv3x3)->Args({16, 16})->Args({96, 64})->Args({256, 64})->Unit(benchmark::kMillisecond);

void BM_MicroForward(benchmark::State& state) {
  ModelConfig c = ModelConfig::micro();
  c.num_msff = static_cast<int>(state.range(0));
  const auto params = init_model<float>(c, 0);
  const auto crop = random_volume(3, c.crop_size, c.crop_size);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(crop, params, c));
}
BENCHMARK(BM_MicroForward)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_MicroTrainingExample(benchmark::State& state) {
  ModelConfig c = ModelConfig::micro();
  const auto params = init_model<float>(c, 0);
  const auto crop = random_volume(3, c.crop_size, c.crop_size);
  StageTargets targets;
  for (int k = 0; k < kJointCount; ++k) targets.joints[k] = {1.0 + k % 14, 2.0 + k % 11};
  const auto maps = gaussian_targets<float>(targets.joints, 2.0, c.heatmap_size, targets.occluded);
  const TrainConfig tc;
  for (auto _ : state) {
    auto grads = params.zeros_like();
    benchmark::DoNotOptimize(example_loss(params, c, crop, targets, maps, tc, &grads));
  }
}
BENCHMARK(BM_MicroTrainingExample)->Unit(benchmark::kMillisecond);

void BM_FullForward(benchmark::State& state) {
  ModelConfig c;
  const auto params = init_model<float>(c, 0);
  const auto crop = random_volume(3, c.crop_size, c.crop_size);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(crop, params, c));
  state.counters["hands_per_s"] =
      benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_FullForward)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
