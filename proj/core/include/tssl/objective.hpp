#pragma once

#include <span>
#include <vector>

#include "tssl/autodiff.hpp"
#include "tssl/config.hpp"
#include "tssl/corruption.hpp"

namespace tssl {

/// Symmetric NT-Xent over the 2N rows of [p1; p2]. Rows are expected to be
/// L2-normalized. Positives are the paired views.
ad::Var simclr_ntxent(ad::Var p1, ad::Var p2, double temperature);

/// (1/T) sum_t mean_n[ sg(w_t) (1 - z1_t . z2_t) ]. Each w_t is [N].
ad::Var selective_additive(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                           std::span<const ad::Var> weights);

/// Same value as selective_additive, with the gate left in the graph.
ad::Var selective_multiplicative(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                                 std::span<const ad::Var> weights);

/// Samples whose view 1 or view 2 carries a family bound to factor slot t.
std::vector<std::size_t> anchor_eligible(std::span<const AugmentationFamily> families1,
                                         std::span<const AugmentationFamily> families2, std::size_t factor,
                                         std::size_t factors);

/// NT-Xent at `temperature` over each factor's eligible subset, averaged over
/// factors whose subset is nonempty; zero when all are empty.
ad::Var anchor_loss(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                    std::span<const AugmentationFamily> families1, std::span<const AugmentationFamily> families2,
                    double temperature);

/// Mean over samples and factor pairs of the squared cosine between factor
/// embeddings (rows assumed unit-norm). Zero for a single factor.
ad::Var diversity_loss(std::span<const ad::Var> z);

/// KL(Dir(alpha) || Dir(c 1)) per row, averaged over rows and over tensors.
ad::Var kl_uniform_dirichlet(std::span<const ad::Var> alphas, double prior_concentration = 1.0);
double kl_dirichlet(std::span<const double> alpha, double prior_concentration = 1.0);

/// Mean softmax cross-entropy of [N, C] logits against integer labels.
ad::Var cross_entropy(ad::Var logits, std::span<const int> labels);

struct ScheduleState {
  double epoch = 0.0;
  double total_epochs = 1.0;
  double ramp_start = 0.0;  // e0, in epochs
  double ramp_end = 1.0;    // e1, in epochs
  double lambda_sel_max = 0.2;
  double lambda_min_start = 0.5;
  double lambda_min_end = 0.05;
  bool lambda_min_phase_restricted = false;

  /// Bounds from fractional config values; throws ConfigError when e0 >= e1.
  static ScheduleState from_config(const ExperimentConfig& config, double epoch);
};

double schedule_lambda_min(const ScheduleState& s);
double schedule_lambda_sel(const ScheduleState& s);
/// Linear 0 -> 1 over [e0, e1].
double ramp_fraction(const ScheduleState& s);

struct LossWeights {
  double base = 1.0;
  double selective = 0.0;
  double anchor = 0.0;
  double diversity = 0.0;
  double aux = 0.0;
  double kl = 0.0;
};

LossWeights loss_weights(const ObjectiveConfig& objective, double lambda_sel);

struct LossTerms {
  ad::Var base;
  ad::Var selective;
  ad::Var anchor;
  ad::Var diversity;
  ad::Var aux;
  ad::Var kl;
};

struct LossBreakdown {
  double base = 0.0;
  double selective = 0.0;
  double anchor = 0.0;
  double diversity = 0.0;
  double aux = 0.0;
  double kl = 0.0;
  double base_weight = 1.0;
  double lambda_sel = 0.0;
  double lambda_min = 0.0;
  double total = 0.0;
  double mean_conflict = 0.0;
  double mean_ignorance = 0.0;

  /// Weighted sum recomputed from the parts.
  double recomputed_total(const LossWeights& w) const;
};

struct AssembledLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

AssembledLoss total_loss(const LossTerms& terms, const LossWeights& weights, double lambda_min);

}  // namespace tssl
