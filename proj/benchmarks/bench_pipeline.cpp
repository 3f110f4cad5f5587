#include <benchmark/benchmark.h>

#include "tssl/corruption.hpp"
#include "tssl/image.hpp"
#include "tssl/rng.hpp"

namespace {

using namespace tssl;

void BM_Corruption(benchmark::State& state) {
  const auto family = corruption_families().at(static_cast<std::size_t>(state.range(0)));
  RngStream rng(3);
  ImageTensor img(32, 32);
  for (double& v : img.values) v = rng.uniform();
  const CorruptionSpec spec(family, 5);
  for (auto _ : state) benchmark::DoNotOptimize(apply_corruption(img, spec, RngStream(11)));
  state.SetLabel(std::string(family_name(family)));
}
BENCHMARK(BM_Corruption)->DenseRange(0, kCorruptionCount - 1);

}  // namespace
