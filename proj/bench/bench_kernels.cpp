#include <benchmark/benchmark.h>

#include <map>

#include "detkit/evalmap.hpp"
#include "detkit/nms.hpp"
#include "detkit/simgen.hpp"

namespace {

const detkit::SimScene& scene_for(int n_images) {
  static std::map<int, detkit::SimScene> cache;
  auto it = cache.find(n_images);
  if (it == cache.end()) {
    detkit::SimConfig cfg;
    cfg.n_images = n_images;
    it = cache.emplace(n_images, detkit::generate(cfg)).first;
  }
  return it->second;
}

void BM_Evaluate(benchmark::State& state) {
  const auto& scene = scene_for(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(detkit::evaluate(scene.detections, scene.ground_truths));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(scene.detections.size()));
}

void BM_EvaluateSerial(benchmark::State& state) {
  const auto& scene = scene_for(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(detkit::evaluate_serial(scene.detections, scene.ground_truths));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(scene.detections.size()));
}

void BM_Nms(benchmark::State& state) {
  const auto& scene = scene_for(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(detkit::nms(scene.detections, {}));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(scene.detections.size()));
}

void BM_NmsSerial(benchmark::State& state) {
  const auto& scene = scene_for(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(detkit::nms_serial(scene.detections, {}));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(scene.detections.size()));
}

}  // namespace

BENCHMARK(BM_Evaluate)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateSerial)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Nms)->Arg(50)->Arg(200)->Arg(1000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_NmsSerial)->Arg(50)->Arg(200)->Arg(1000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
