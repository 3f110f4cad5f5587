#pragma once

#include <span>
#include <vector>

#include "tssl/autodiff.hpp"
#include "tssl/config.hpp"
#include "tssl/tensor.hpp"

namespace tssl {

/// Subjective-logic opinion over M prototypes: sum(belief) + ignorance = 1.
struct BeliefState {
  std::vector<double> belief;
  double ignorance = 1.0;
  double strength = 0.0;  // Dirichlet strength S
};

/// alpha = e + beta, S = sum(alpha), b = e / S, u = beta M / S.
BeliefState belief_state(std::span<const double> evidence, double beta);

/// Mass on incompatible prototype pairs, sum_{i != j} b1_i b2_j, evaluated
/// as (sum b1)(sum b2) - sum b1_i b2_i.
double conflict(std::span<const double> b1, std::span<const double> b2);
double conflict(const BeliefState& a, const BeliefState& b);

/// min{1, u1 u2 / (1 - K) + epsilon |u1 - u2|}; K must be below 1.
double fused_ignorance(double u1, double u2, double conflict, double epsilon);

struct FusionResult {
  double conflict = 0.0;
  double ignorance = 1.0;
};

FusionResult fuse(const BeliefState& a, const BeliefState& b, double epsilon);

/// lambda_min + (1 - lambda_min) exp(-alpha K - gamma I). Rejects K outside
/// [0, 1), I outside [0, 1] and lambda_min outside (0, 1).
double trust_gate(double conflict, double ignorance, double lambda_min, double alpha, double gamma);

/// sigmoid(cos(z1, z2) / tau).
double cosine_gate(std::span<const double> z1, std::span<const double> z2, double tau);

/// Per-sample, per-factor gate values with their diagnostics. All [N, T].
struct TrustWeights {
  Tensor weight;
  Tensor conflict;
  Tensor ignorance;

  double mean_conflict() const;
  double mean_ignorance() const;
};

/// Detached evaluation from per-factor evidence of both views (each [N, M]).
TrustWeights evidential_trust(std::span<const Tensor> evidence1, std::span<const Tensor> evidence2, double beta,
                              double lambda_min, const GateConfig& gate);

/// Detached cosine gate from per-factor embeddings (each [N, d]) and the [T]
/// temperature vector. conflict/ignorance are left at zero.
TrustWeights cosine_trust(std::span<const Tensor> z1, std::span<const Tensor> z2, const Tensor& temperature);

/// In-graph gate for one factor; every output is [N] and differentiable.
struct GateGraph {
  ad::Var weight;
  ad::Var conflict;
  ad::Var ignorance;
};

GateGraph evidential_gate_graph(ad::Var evidence1, ad::Var evidence2, double beta, double lambda_min,
                                const GateConfig& gate);
/// z1, z2: [N, d]; temperature: single-element var. Returns [N].
ad::Var cosine_gate_graph(ad::Var z1, ad::Var z2, ad::Var temperature);

}  // namespace tssl
