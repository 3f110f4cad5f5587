#include <benchmark/benchmark.h>

#include "tssl/autodiff.hpp"
#include "tssl/model.hpp"
#include "tssl/objective.hpp"
#include "tssl/rng.hpp"

namespace {

using namespace tssl;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var loss = ad::sum(ad::matmul(g.parameter(a), g.parameter(b)));
    benchmark::DoNotOptimize(g.backward(loss));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_NtXent(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor p1 = random_tensor({n, 64}, 3), p2 = random_tensor({n, 64}, 4);
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var loss =
        simclr_ntxent(ad::l2_normalize(g.parameter(p1)), ad::l2_normalize(g.parameter(p2)), 0.2);
    benchmark::DoNotOptimize(g.backward(loss));
  }
}
BENCHMARK(BM_NtXent)->Arg(64)->Arg(256);

// One encoder forward and backward at the default model size.
void BM_EncoderStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ModelConfig config;
  const ParameterStore params = init_parameters(config, 7);
  RngStream rng(5);
  Tensor images({n, 3, config.image_size, config.image_size});
  for (double& v : images.values()) v = rng.uniform();
  for (auto _ : state) {
    ad::Graph g;
    ModelGraph model(g, config, params);
    const ad::Var loss = ad::mean(model.encode(images));
    benchmark::DoNotOptimize(g.backward(loss));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EncoderStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
