#include <benchmark/benchmark.h>

#include <vector>

#include "tssl/config.hpp"
#include "tssl/fusion.hpp"
#include "tssl/ood.hpp"
#include "tssl/rng.hpp"

namespace {

using namespace tssl;

std::vector<Tensor> random_evidence(std::size_t factors, std::size_t n, std::size_t m, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < factors; ++t) {
    Tensor e({n, m});
    for (double& v : e.values()) v = rng.uniform(0.0, 5.0);
    out.push_back(std::move(e));
  }
  return out;
}

void BM_EvidentialTrust(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto e1 = random_evidence(6, n, 16, 1), e2 = random_evidence(6, n, 16, 2);
  const GateConfig gate;
  for (auto _ : state) benchmark::DoNotOptimize(evidential_trust(e1, e2, 0.05, 0.3, gate));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 6));
}
BENCHMARK(BM_EvidentialTrust)->Arg(64)->Arg(1024);

void BM_TrustGateScalar(benchmark::State& state) {
  double k = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(trust_gate(k, 0.2, 0.3, 2.0, 3.0));
    k = k < 0.9 ? k + 1e-3 : 0.1;
  }
}
BENCHMARK(BM_TrustGateScalar);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(9);
  std::vector<double> id(n), ood(n);
  for (double& v : id) v = rng.normal();
  for (double& v : ood) v = rng.normal() + 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(auroc(id, ood));
}
BENCHMARK(BM_Auroc)->Arg(500)->Arg(10000);

}  // namespace
