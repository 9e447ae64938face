#include <benchmark/benchmark.h>

#include "pszsim/diffusion.hpp"
#include "pszsim/pm.hpp"
#include "pszsim/rng.hpp"
#include "pszsim/scene.hpp"

using namespace psz;

namespace {

const SceneGeometry& full_scene() {
  static const SceneGeometry geom = paper_geometry();
  return geom;
}

DesiredField full_target() {
  return planewave_target(full_scene(), 1000.0, Vec3(0, 1, 0), 1.0);
}

}  // namespace

static void BM_FreefieldAtf(benchmark::State& state) {
  const SceneGeometry& geom = full_scene();
  for (auto _ : state) {
    ATFMatrix atf = freefield_atf(geom, 1000.0);
    benchmark::DoNotOptimize(atf.entries.data());
  }
}
BENCHMARK(BM_FreefieldAtf);

static void BM_ImageSourceRir(benchmark::State& state) {
  const SceneGeometry& geom = full_scene();
  ImageSourceParams params;
  params.window_len = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto rir = image_source_rir(geom.room_dims, geom.speaker_positions[4],
                                geom.bright_mics[0], geom.sound_speed, params);
    benchmark::DoNotOptimize(rir.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ImageSourceRir)->RangeMultiplier(2)->Range(512, 4096)->Complexity();

static void BM_PerturbAtf(benchmark::State& state) {
  const ATFMatrix atf = freefield_atf(full_scene(), 1000.0);
  RngStream rng(1);
  const PerturbationModel pert{0.0707, 1};
  for (auto _ : state) {
    ATFMatrix noisy = perturb_atf(atf, pert, rng);
    benchmark::DoNotOptimize(noisy.entries.data());
  }
}
BENCHMARK(BM_PerturbAtf);

static void BM_CpmStep(benchmark::State& state) {
  const ATFMatrix atf = freefield_atf(full_scene(), 1000.0);
  const DesiredField d = full_target();
  CpmState s{{CVector::Zero(9), 1000.0}, 0.25 * stability_bound(atf), 0};
  for (auto _ : state) {
    s = cpm_step(s, atf, d);
    benchmark::DoNotOptimize(s.filter.weights.data());
  }
}
BENCHMARK(BM_CpmStep);

static void BM_DpmdIteration(benchmark::State& state) {
  const ATFMatrix atf = freefield_atf(full_scene(), 1000.0);
  const DesiredField d = full_target();
  const bool system1 = state.range(0) == 1;
  const auto [top, part] = system1 ? system1_partition() : system2_partition();
  const CombinationMatrix weights = uniform_combination(top);
  NetworkState net = make_network(top.n_nodes(), 9, 0.25 * stability_bound(atf), 1000.0);
  for (auto _ : state) {
    net = dpmd_iteration(net, atf, d, part, weights, top);
    benchmark::DoNotOptimize(net.nodes.front().estimate.weights.data());
  }
}
BENCHMARK(BM_DpmdIteration)->Arg(1)->Arg(2);

static void BM_LeastSquares(benchmark::State& state) {
  const ATFMatrix atf = freefield_atf(full_scene(), 1000.0);
  const DesiredField d = full_target();
  for (auto _ : state) {
    ControlFilter g = least_squares_solution(atf, d, 1e-6);
    benchmark::DoNotOptimize(g.weights.data());
  }
}
BENCHMARK(BM_LeastSquares);

BENCHMARK_MAIN();
