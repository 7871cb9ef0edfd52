#include <benchmark/benchmark.h>

#include <random>

#include "idpf/evalkit.hpp"
#include "idpf/evasion.hpp"
#include "idpf/zoo.hpp"

using namespace idpf;

namespace {

nn::Tensor random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  nn::Tensor t(c, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

FaceImage random_face(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  FaceImage x(synth::RendererConfig{}.shape);
  for (double& p : x.pixels()) p = u(rng);
  return x;
}

}  // namespace

static void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  nn::Conv2d conv(c, 2 * c, 2);
  Rng rng(1);
  conv.init_he(rng);
  const auto x = random_tensor(c, 64, 64, 2);
  std::vector<double> cols;
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, &cols));
}
BENCHMARK(BM_ConvForward)->Arg(3)->Arg(16)->Arg(32);

static void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  nn::Conv2d conv(c, 2 * c, 2);
  Rng rng(1);
  conv.init_he(rng);
  const auto x = random_tensor(c, 64, 64, 2);
  std::vector<double> cols;
  const auto y = conv.forward(x, &cols);
  const auto dy = random_tensor(y.c, y.h, y.w, 3);
  std::vector<double> dw(conv.weight.size()), db(conv.bias.size());
  nn::Tensor dx;
  for (auto _ : state) {
    conv.backward(x, cols, dy, &dw, &db, &dx);
    benchmark::DoNotOptimize(dx.data.data());
  }
}
BENCHMARK(BM_ConvBackward)->Arg(3)->Arg(16)->Arg(32);

static void BM_BimAttack(benchmark::State& state) {
  const auto spec = zoo::standard_extractors().front();
  const auto z = std::make_shared<idmodel::EmbeddingBackend>(spec.arch, spec.init_seed);
  const evasion::EmbedDistanceObjective obj({z}, random_face(7));
  evasion::AttackBudget budget;
  budget.iterations = static_cast<int>(state.range(0));
  const auto x = random_face(8);
  for (auto _ : state) benchmark::DoNotOptimize(evasion::bim_attack(x, obj, budget));
}
BENCHMARK(BM_BimAttack)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_Auc(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<evalkit::ScoredSample> s;
  for (std::int64_t i = 0; i < state.range(0); ++i) s.push_back({std::to_string(i), (i & 1) != 0, u(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(evalkit::compute_auc(s));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auc)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oNLogN);
BENCHMARK_MAIN();
