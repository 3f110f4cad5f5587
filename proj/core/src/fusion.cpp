#include "tssl/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tssl/error.hpp"

namespace tssl {
namespace {

double mean_of(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return t.size() ? acc / static_cast<double>(t.size()) : 0.0;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_factor_lists(std::size_t a, std::size_t b) {
  if (a != b || a == 0) throw ShapeError("trust: both views need the same nonzero number of factors");
}

}  // namespace

BeliefState belief_state(std::span<const double> evidence, double beta) {
  if (!(beta > 0.0)) throw DomainError("belief_state: beta must be positive");
  const double m = static_cast<double>(evidence.size());
  double strength = beta * m;
  for (double e : evidence) {
    if (e < 0.0) throw DomainError("belief_state: negative evidence");
    strength += e;
  }
  BeliefState s;
  s.strength = strength;
  s.belief.reserve(evidence.size());
  for (double e : evidence) s.belief.push_back(e / strength);
  s.ignorance = beta * m / strength;
  return s;
}

double conflict(std::span<const double> b1, std::span<const double> b2) {
  if (b1.size() != b2.size()) {
    throw ShapeError("conflict: belief states over " + std::to_string(b1.size()) + " and " +
                     std::to_string(b2.size()) + " prototypes");
  }
  double s1 = 0.0, s2 = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    s1 += b1[i];
    s2 += b2[i];
    diag += b1[i] * b2[i];
  }
  return std::max(0.0, s1 * s2 - diag);
}

double conflict(const BeliefState& a, const BeliefState& b) { return conflict(a.belief, b.belief); }

double fused_ignorance(double u1, double u2, double k, double epsilon) {
  if (!(k < 1.0)) throw DomainError("fused_ignorance: conflict " + std::to_string(k) + " must be below 1");
  return std::min(1.0, u1 * u2 / (1.0 - k) + epsilon * std::abs(u1 - u2));
}

FusionResult fuse(const BeliefState& a, const BeliefState& b, double epsilon) {
  FusionResult r;
  r.conflict = conflict(a, b);
  r.ignorance = fused_ignorance(a.ignorance, b.ignorance, r.conflict, epsilon);
  return r;
}

double trust_gate(double k, double i, double lambda_min, double alpha, double gamma) {
  if (!(k >= 0.0 && k < 1.0)) throw DomainError("trust_gate: conflict " + std::to_string(k) + " outside [0, 1)");
  if (!(i >= 0.0 && i <= 1.0)) throw DomainError("trust_gate: ignorance " + std::to_string(i) + " outside [0, 1]");
  if (!(lambda_min > 0.0 && lambda_min < 1.0)) {
    throw DomainError("trust_gate: lambda_min " + std::to_string(lambda_min) + " outside (0, 1)");
  }
  return lambda_min + (1.0 - lambda_min) * std::exp(-alpha * k - gamma * i);
}

double cosine_gate(std::span<const double> z1, std::span<const double> z2, double tau) {
  if (z1.size() != z2.size()) throw ShapeError("cosine_gate: embeddings differ in dimension");
  if (!(tau > 0.0)) throw DomainError("cosine_gate: temperature must be positive");
  const double dot = std::inner_product(z1.begin(), z1.end(), z2.begin(), 0.0);
  const double n1 = std::sqrt(std::inner_product(z1.begin(), z1.end(), z1.begin(), 0.0));
  const double n2 = std::sqrt(std::inner_product(z2.begin(), z2.end(), z2.begin(), 0.0));
  const double cos = dot / std::max(n1 * n2, 1e-300);
  return sigmoid(cos / tau);
}

double TrustWeights::mean_conflict() const { return mean_of(conflict); }
double TrustWeights::mean_ignorance() const { return mean_of(ignorance); }

TrustWeights evidential_trust(std::span<const Tensor> e1, std::span<const Tensor> e2, double beta,
                              double lambda_min, const GateConfig& gate) {
  check_factor_lists(e1.size(), e2.size());
  const std::size_t factors = e1.size();
  const std::size_t n = e1.front().dim(0);
  const std::size_t m = e1.front().dim(1);
  TrustWeights w{Tensor(Shape{n, factors}), Tensor(Shape{n, factors}), Tensor(Shape{n, factors})};
  for (std::size_t t = 0; t < factors; ++t) {
    if (e1[t].shape() != Shape{n, m} || e2[t].shape() != Shape{n, m}) throw ShapeError("evidential_trust: evidence shapes differ");
    for (std::size_t i = 0; i < n; ++i) {
      const auto s1 = belief_state(e1[t].values().subspan(i * m, m), beta);
      const auto s2 = belief_state(e2[t].values().subspan(i * m, m), beta);
      const FusionResult f = fuse(s1, s2, gate.epsilon);
      w.conflict[i * factors + t] = f.conflict;
      w.ignorance[i * factors + t] = f.ignorance;
      w.weight[i * factors + t] = trust_gate(f.conflict, f.ignorance, lambda_min, gate.alpha, gate.gamma);
    }
  }
  return w;
}

TrustWeights cosine_trust(std::span<const Tensor> z1, std::span<const Tensor> z2, const Tensor& temperature) {
  check_factor_lists(z1.size(), z2.size());
  const std::size_t factors = z1.size();
  if (temperature.size() != factors) throw ShapeError("cosine_trust: one temperature per factor required");
  const std::size_t n = z1.front().dim(0);
  const std::size_t d = z1.front().dim(1);
  TrustWeights w{Tensor(Shape{n, factors}), Tensor(Shape{n, factors}), Tensor(Shape{n, factors})};
  for (std::size_t t = 0; t < factors; ++t)
    for (std::size_t i = 0; i < n; ++i)
      w.weight[i * factors + t] =
          cosine_gate(z1[t].values().subspan(i * d, d), z2[t].values().subspan(i * d, d), temperature[t]);
  return w;
}

GateGraph evidential_gate_graph(ad::Var e1, ad::Var e2, double beta, double lambda_min, const GateConfig& gate) {
  ad::Graph& g = *e1.graph;
  const std::size_t n = e1.shape().at(0);
  const double prior = beta * static_cast<double>(e1.shape().at(1));
  const ad::Var prior_mass = g.constant(Tensor::scalar(prior));
  const ad::Var s1 = ad::sum_last(e1, true) + prior;
  const ad::Var s2 = ad::sum_last(e2, true) + prior;
  const ad::Var b1 = e1 / s1;
  const ad::Var b2 = e2 / s2;
  const ad::Var u1 = ad::reshape(prior_mass / s1, Shape{n});
  const ad::Var u2 = ad::reshape(prior_mass / s2, Shape{n});
  const ad::Var k = ad::sum_last(b1) * ad::sum_last(b2) - ad::dot_last(b1, b2);
  const ad::Var dempster = (u1 * u2) / (1.0 - k);
  const ad::Var i = ad::min_scalar(dempster + gate.epsilon * ad::abs(u1 - u2), 1.0);
  const ad::Var w = (1.0 - lambda_min) * ad::exp(-gate.alpha * k - gate.gamma * i) + lambda_min;
  return {w, k, i};
}

ad::Var cosine_gate_graph(ad::Var z1, ad::Var z2, ad::Var temperature) {
  return ad::sigmoid(ad::dot_last(z1, z2) / temperature);
}

}  // namespace tssl
