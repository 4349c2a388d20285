#include <benchmark/benchmark.h>

#include <random>

#include "apckit/attacks.hpp"
#include "apckit/datasets.hpp"
#include "apckit/defenses.hpp"
#include "apckit/geometry.hpp"
#include "apckit/purifier.hpp"
#include "apckit/victims.hpp"

using namespace apckit;

namespace {

PointCloud cloud(std::size_t n, std::uint64_t seed) { return data::generate_shape("torus", n, seed).cloud; }

void BM_KnnIndices(benchmark::State& state) {
  const PointCloud c = cloud(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::knn_indices(c, 8));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KnnIndices)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);

void BM_ChamferOneSided(benchmark::State& state) {
  const PointCloud a = cloud(static_cast<std::size_t>(state.range(0)), 1);
  const PointCloud b = cloud(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::chamfer_one_sided(a, b));
}
BENCHMARK(BM_ChamferOneSided)->RangeMultiplier(2)->Range(64, 1024);

void BM_Sor(benchmark::State& state) {
  const PointCloud c = cloud(256, 3);
  for (auto _ : state) benchmark::DoNotOptimize(defenses::sor(c, 2, 1.1));
}
BENCHMARK(BM_Sor);

void BM_VictimForward(benchmark::State& state) {
  victims::VictimConfig vc;
  vc.architecture = state.range(0) == 0 ? victims::Architecture::kPointNetMini : victims::Architecture::kDgcnnMini;
  const victims::VictimModel m(vc);
  const PointCloud c = cloud(256, 4);
  for (auto _ : state) benchmark::DoNotOptimize(victims::predict(m, c));
  state.SetLabel(m.name());
}
BENCHMARK(BM_VictimForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InputGradient(benchmark::State& state) {
  const victims::VictimModel m(victims::VictimConfig{});
  const PointCloud c = cloud(256, 5);
  for (auto _ : state) benchmark::DoNotOptimize(victims::input_gradient(m, c, 0));
}
BENCHMARK(BM_InputGradient)->Unit(benchmark::kMillisecond);

void BM_ApcPurify(benchmark::State& state) {
  const purifier::ApcModel m{purifier::ApcConfig{}};
  const PointCloud c = cloud(256, 6);
  for (auto _ : state) benchmark::DoNotOptimize(purifier::apc_purify(m, c));
}
BENCHMARK(BM_ApcPurify)->Unit(benchmark::kMillisecond);

void BM_PgdAttack(benchmark::State& state) {
  const victims::VictimModel m(victims::VictimConfig{});
  data::LabeledCloud ex = data::generate_shape("cube", 256, 7);
  attacks::AttackSpec spec = attacks::default_spec("pgd");
  spec.steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(attacks::attack_pgd(m, ex, spec));
}
BENCHMARK(BM_PgdAttack)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
