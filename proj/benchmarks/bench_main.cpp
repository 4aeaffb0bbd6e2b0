#include <benchmark/benchmark.h>

#include "tba/approx.hpp"
#include "tba/capture.hpp"
#include "tba/linalg.hpp"
#include "tba/rng.hpp"
#include "tba/similarity.hpp"
#include "tba/synth.hpp"

namespace {

using namespace tba;

Tensor gaussian(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

// Token-row least squares at the width of the fitted maps.
void BM_Lstsq(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const Tensor a = gaussian({rows, d}, 1);
  const Tensor b = gaussian({rows, d}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(lstsq(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_Lstsq)->Args({3000, 32})->Args({20000, 64})->Args({20000, 384})->Unit(benchmark::kMillisecond);

PlantSpec bench_spec(std::size_t d) {
  PlantSpec spec;
  spec.base.image_size = 32;
  spec.base.patch_size = 4;
  spec.base.channels = 3;
  spec.base.d_model = d;
  spec.base.num_blocks = 8;
  spec.base.num_heads = 4;
  spec.base.mlp_hidden = 4 * d;
  return spec;
}

void BM_Forward(benchmark::State& state) {
  const TransformerModel model = make_planted_model(bench_spec(static_cast<std::size_t>(state.range(0))));
  const Tensor image = gaussian({32, 32, 3}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(image));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Capture(benchmark::State& state) {
  const PlantSpec spec = bench_spec(64);
  const TransformerModel model = make_planted_model(spec);
  SynthDataSpec ds;
  ds.num_classes = 4;
  ds.samples_per_class = static_cast<std::size_t>(state.range(0)) / 4;
  ds.image_size = 32;
  const Dataset data = make_synth_dataset(ds);
  for (auto _ : state) benchmark::DoNotOptimize(capture(model, data, full_subset(data), {}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Capture)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_SimilarityMatrix(benchmark::State& state) {
  const auto blocks = static_cast<std::size_t>(state.range(0));
  ActivationSet acts;
  acts.num_blocks = blocks;
  for (std::size_t k = 1; k <= blocks; ++k) acts.blocks[k] = gaussian({500, 384}, k);
  const Metric metric = static_cast<Metric>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(similarity_matrix(acts, metric));
  state.SetLabel(to_string(metric));
}
BENCHMARK(BM_SimilarityMatrix)
    ->Args({12, static_cast<int>(Metric::kMse)})
    ->Args({12, static_cast<int>(Metric::kCosine)})
    ->Args({12, static_cast<int>(Metric::kCka)})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
