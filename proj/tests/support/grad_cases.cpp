#include "grad_cases.hpp"

#include <cmath>

#include "tssl/corruption.hpp"
#include "tssl/fusion.hpp"
#include "tssl/objective.hpp"

namespace tssl::testing {

using ad::Graph;
using ad::Var;
using Params = std::span<const Var>;

Tensor random_tensor(RngStream& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_away_from_zero(RngStream& rng, Shape shape, double margin, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, hi);
  return t;
}

Var weighted_mean(Var out) {
  Tensor c(out.shape());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::sin(0.7 * static_cast<double>(i) + 0.3) + 0.5;
  return ad::mean(out * out.graph->constant(std::move(c)));
}

namespace {

GradCase unary(std::string name, double lo, double hi, Var (*op)(Var)) {
  return {std::move(name), [lo, hi](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4}, lo, hi)}; },
          [op](Graph&, Params p) { return weighted_mean(op(p[0])); }};
}

GradCase binary(std::string name, Shape a, Shape b, Var (*op)(Var, Var), double lo = -1.0, double hi = 1.0) {
  return {std::move(name),
          [a, b, lo, hi](RngStream& r) { return std::vector<Tensor>{random_tensor(r, a, lo, hi), random_tensor(r, b, lo, hi)}; },
          [op](Graph&, Params p) { return weighted_mean(op(p[0], p[1])); }};
}

std::vector<Tensor> unit_rows(RngStream& r, std::size_t count, std::size_t n, std::size_t d) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < count; ++k) {
    Tensor t = random_tensor(r, {n, d});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += t[i * d + j] * t[i * d + j];
      for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= std::sqrt(s);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Var> normalized(Params p, std::size_t begin, std::size_t count) {
  std::vector<Var> z;
  for (std::size_t k = 0; k < count; ++k) z.push_back(ad::l2_normalize(p[begin + k]));
  return z;
}

}  // namespace

std::vector<GradCase> primitive_cases() {
  std::vector<GradCase> c;
  c.push_back(binary("matmul", {3, 4}, {4, 2}, ad::matmul));
  c.push_back({"transpose", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::transpose(p[0])); }});
  c.push_back(binary("add_same", {3, 4}, {3, 4}, ad::add));
  c.push_back(binary("add_bias", {3, 4}, {4}, ad::add));
  c.push_back(binary("sub_column", {3, 4}, {3, 1}, ad::sub));
  c.push_back(binary("mul_scalar_bcast", {3, 4}, {1}, ad::mul));
  c.push_back(binary("mul_same", {3, 4}, {3, 4}, ad::mul));
  c.push_back(binary("div_column", {3, 4}, {3, 1}, ad::div, 0.5, 2.0));
  c.push_back({"div_scalar_numerator", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {1}, 0.5, 2.0), random_tensor(r, {3, 1}, 0.5, 2.0)};
               },
               [](Graph&, Params p) { return weighted_mean(ad::div(p[0], p[1])); }});
  c.push_back({"scale_add_scalar", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::add_scalar(ad::scale(p[0], -1.7), 0.4)); }});
  c.push_back(unary("softplus", -3.0, 3.0, ad::softplus));
  c.push_back({"relu", [](RngStream& r) { return std::vector<Tensor>{random_away_from_zero(r, {3, 4}, 0.05, 1.0)}; },
               [](Graph&, Params p) { return weighted_mean(ad::relu(p[0])); }});
  c.push_back(unary("sigmoid", -4.0, 4.0, ad::sigmoid));
  c.push_back(unary("exp", -2.0, 2.0, ad::exp));
  c.push_back(unary("log", 0.3, 3.0, ad::log));
  c.push_back(unary("log_gamma", 0.2, 5.0, ad::log_gamma));
  c.push_back(unary("digamma", 0.3, 5.0, ad::digamma));
  c.push_back({"abs", [](RngStream& r) { return std::vector<Tensor>{random_away_from_zero(r, {3, 4}, 0.05, 1.0)}; },
               [](Graph&, Params p) { return weighted_mean(ad::abs(p[0])); }});
  c.push_back({"min_scalar", [](RngStream& r) {
                 Tensor t = random_tensor(r, {3, 4}, -1.0, 1.0);
                 for (auto& v : t.values())
                   if (std::abs(v - 0.2) < 0.05) v += 0.1;
                 return std::vector<Tensor>{t};
               },
               [](Graph&, Params p) { return weighted_mean(ad::min_scalar(p[0], 0.2)); }});
  c.push_back({"sum", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return ad::sum(ad::mul(p[0], p[0])); }});
  c.push_back({"mean", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return ad::mean(ad::exp(p[0])); }});
  c.push_back({"sum_last", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::sum_last(p[0])); }});
  c.push_back({"sum_last_keepdim", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::mul(ad::sum_last(p[0], true), p[0])); }});
  c.push_back(binary("dot_last", {3, 4}, {3, 4}, ad::dot_last));
  c.push_back({"l2_normalize", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::l2_normalize(p[0])); }});
  c.push_back(unary("logsumexp", -2.0, 2.0, ad::logsumexp));
  c.push_back({"concat_axis0", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {2, 3}), random_tensor(r, {1, 3})}; },
               [](Graph&, Params p) {
                 const Var parts[] = {p[0], p[1]};
                 return weighted_mean(ad::mul(ad::concat(parts, 0), ad::concat(parts, 0)));
               }});
  c.push_back({"concat_axis1", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {2, 3}), random_tensor(r, {2, 2})}; },
               [](Graph&, Params p) {
                 const Var parts[] = {p[0], p[1]};
                 return weighted_mean(ad::exp(ad::concat(parts, 1)));
               }});
  c.push_back({"slice", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {4, 5})}; },
               [](Graph&, Params p) { return weighted_mean(ad::exp(ad::slice(p[0], 1, 1, 4))); }});
  c.push_back({"gather_rows", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {4, 3})}; },
               [](Graph&, Params p) { return weighted_mean(ad::exp(ad::gather_rows(p[0], {2, 0, 2}))); }});
  c.push_back({"stop_gradient", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {3, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::mul(p[0], ad::stop_gradient(ad::exp(p[0])))); }});
  c.push_back({"conv2d_stride1_pad1", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {2, 2, 5, 5}), random_tensor(r, {3, 2, 3, 3}),
                                            random_tensor(r, {3})};
               },
               [](Graph&, Params p) { return weighted_mean(ad::conv2d(p[0], p[1], p[2], 1, 1)); }});
  c.push_back({"conv2d_stride2_pad0", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {2, 2, 6, 6}), random_tensor(r, {2, 2, 3, 3}),
                                            random_tensor(r, {2})};
               },
               [](Graph&, Params p) { return weighted_mean(ad::conv2d(p[0], p[1], p[2], 2, 0)); }});
  c.push_back({"global_avg_pool", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {2, 3, 4, 4})}; },
               [](Graph&, Params p) { return weighted_mean(ad::global_avg_pool(ad::exp(p[0]))); }});
  c.push_back({"reshape", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {2, 6})}; },
               [](Graph&, Params p) { return weighted_mean(ad::exp(ad::reshape(p[0], {3, 4}))); }});
  return c;
}

std::vector<GradCase> loss_cases() {
  std::vector<GradCase> c;
  constexpr std::size_t kN = 4, kD = 5, kT = 3, kM = 4;
  c.push_back({"simclr_ntxent", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {kN, kD}), random_tensor(r, {kN, kD})}; },
               [](Graph&, Params p) {
                 return simclr_ntxent(ad::l2_normalize(p[0]), ad::l2_normalize(p[1]), 0.2);
               }});
  // z1 factors, z2 factors, gate logits.
  auto selective_params = [](RngStream& r) {
    std::vector<Tensor> p;
    for (std::size_t k = 0; k < 2 * kT; ++k) p.push_back(random_tensor(r, {kN, kD}));
    for (std::size_t k = 0; k < kT; ++k) p.push_back(random_tensor(r, {kN}, -2.0, 2.0));
    return p;
  };
  auto gates = [](Params p) {
    std::vector<Var> w;
    for (std::size_t k = 0; k < kT; ++k) w.push_back(ad::sigmoid(p[2 * kT + k]));
    return w;
  };
  c.push_back({"selective_additive", selective_params, [gates](Graph&, Params p) {
                 return selective_additive(normalized(p, 0, kT), normalized(p, kT, kT), gates(p));
               }});
  c.push_back({"selective_multiplicative", selective_params, [gates](Graph&, Params p) {
                 return selective_multiplicative(normalized(p, 0, kT), normalized(p, kT, kT), gates(p));
               }});
  c.push_back({"anchor_loss", [](RngStream& r) {
                 std::vector<Tensor> p;
                 for (std::size_t k = 0; k < 2 * kT; ++k) p.push_back(random_tensor(r, {kN, kD}));
                 return p;
               },
               [](Graph&, Params p) {
                 using F = AugmentationFamily;
                 // Slots under T = 3: blur -> 0, colour -> 1, haze -> 0, occlusion -> 1, contrast -> 2.
                 const F f1[] = {F::kGaussianBlur, F::kColorDistortion, F::kClean, F::kContrastReversal};
                 const F f2[] = {F::kHaze, F::kClean, F::kOcclusion, F::kContrastReversal};
                 return anchor_loss(normalized(p, 0, kT), normalized(p, kT, kT), f1, f2, 0.5);
               }});
  c.push_back({"diversity_loss", [](RngStream& r) {
                 std::vector<Tensor> p;
                 for (std::size_t k = 0; k < kT; ++k) p.push_back(random_tensor(r, {kN, kD}));
                 return p;
               },
               [](Graph&, Params p) { return diversity_loss(normalized(p, 0, kT)); }});
  c.push_back({"kl_uniform_dirichlet", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {kN, kM}, 0.3, 4.0), random_tensor(r, {kN, kM}, 0.3, 4.0)};
               },
               [](Graph&, Params p) {
                 const Var a[] = {p[0], p[1]};
                 return kl_uniform_dirichlet(a, 1.0);
               }});
  c.push_back({"kl_beta_prior", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {kN, kM}, 0.3, 4.0)}; },
               [](Graph&, Params p) {
                 const Var a[] = {p[0]};
                 return kl_uniform_dirichlet(a, 0.05);
               }});
  c.push_back({"aux_cross_entropy", [](RngStream& r) { return std::vector<Tensor>{random_tensor(r, {kN, 10}, -2.0, 2.0)}; },
               [](Graph&, Params p) {
                 const int labels[] = {0, 9, 3, 3};
                 return cross_entropy(p[0], labels);
               }});
  c.push_back({"evidential_gate", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {kN, kM}, -1.0, 1.5), random_tensor(r, {kN, kM}, -1.0, 1.5)};
               },
               [](Graph&, Params p) {
                 const GateGraph g = evidential_gate_graph(ad::softplus(p[0]), ad::softplus(p[1]), 0.05, 0.3, GateConfig{});
                 return ad::mean(g.weight) + ad::mean(g.conflict) + ad::mean(g.ignorance);
               }});
  c.push_back({"cosine_gate", [](RngStream& r) {
                 return std::vector<Tensor>{random_tensor(r, {kN, kD}), random_tensor(r, {kN, kD}),
                                            random_tensor(r, {1}, 0.5, 2.0)};
               },
               [](Graph&, Params p) {
                 return weighted_mean(cosine_gate_graph(ad::l2_normalize(p[0]), ad::l2_normalize(p[1]), p[2]));
               }});
  c.push_back({"total_objective", [](RngStream& r) {
                 std::vector<Tensor> p{random_tensor(r, {kN, kD}), random_tensor(r, {kN, kD})};
                 for (std::size_t k = 0; k < 2 * kT; ++k) p.push_back(random_tensor(r, {kN, kD}));
                 for (std::size_t k = 0; k < 2 * kT; ++k) p.push_back(random_tensor(r, {kD, kM}, -1.0, 1.0));
                 p.push_back(random_tensor(r, {kN * 2, 10}));
                 return p;
               },
               [](Graph&, Params p) {
                 using F = AugmentationFamily;
                 const auto z1 = normalized(p, 2, kT), z2 = normalized(p, 2 + kT, kT);
                 std::vector<Var> w, alphas;
                 for (std::size_t t = 0; t < kT; ++t) {
                   const Var e1 = ad::softplus(ad::matmul(z1[t], p[2 + 2 * kT + t]));
                   const Var e2 = ad::softplus(ad::matmul(z2[t], p[2 + 3 * kT + t]));
                   w.push_back(evidential_gate_graph(e1, e2, 0.05, 0.4, GateConfig{}).weight);
                   alphas.push_back(e1 + 0.05);
                   alphas.push_back(e2 + 0.05);
                 }
                 const F f1[] = {F::kGaussianBlur, F::kClean, F::kRain, F::kHaze};
                 const F f2[] = {F::kClean, F::kChannelDropout, F::kClean, F::kMotionBlur};
                 const int tags[] = {1, 0, 9, 3, 0, 8, 0, 2};
                 LossTerms terms{simclr_ntxent(ad::l2_normalize(p[0]), ad::l2_normalize(p[1]), 0.2),
                                 selective_additive(z1, z2, w),
                                 anchor_loss(z1, z2, f1, f2, 0.5),
                                 diversity_loss(z1),
                                 cross_entropy(p[2 + 4 * kT], tags),
                                 kl_uniform_dirichlet(alphas)};
                 LossWeights lw{1.0, 0.2, 0.05, 0.1, 0.5, 0.001};
                 return total_loss(terms, lw, 0.4).total;
               }});
  return c;
}

}  // namespace tssl::testing
