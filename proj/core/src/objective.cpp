#include "tssl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tssl/error.hpp"
#include "tssl/special_functions.hpp"

namespace tssl {
namespace {

constexpr double kMasked = -1e300;

ad::Var zero(ad::Graph& g) { return g.constant(Tensor::scalar(0.0)); }

void check_factors(std::span<const ad::Var> z1, std::span<const ad::Var> z2, std::size_t weights) {
  if (z1.empty() || z1.size() != z2.size() || z1.size() != weights) {
    throw ShapeError("selective: factor lists disagree in length");
  }
}

ad::Var gated_alignment(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                        std::span<const ad::Var> weights, bool detach) {
  check_factors(z1, z2, weights.size());
  ad::Var acc{};
  for (std::size_t t = 0; t < z1.size(); ++t) {
    const ad::Var w = detach ? ad::stop_gradient(weights[t]) : weights[t];
    const ad::Var term = ad::mean(w * (1.0 - ad::dot_last(z1[t], z2[t])));
    acc = t == 0 ? term : acc + term;
  }
  return acc * (1.0 / static_cast<double>(z1.size()));
}

}  // namespace

ad::Var simclr_ntxent(ad::Var p1, ad::Var p2, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("simclr_ntxent: temperature must be positive");
  if (p1.shape() != p2.shape() || p1.shape().size() != 2 || p1.shape()[0] == 0) {
    throw ShapeError("simclr_ntxent: views must be matching nonempty [N, P] batches");
  }
  ad::Graph& g = *p1.graph;
  const std::size_t rows = 2 * p1.shape()[0];
  const ad::Var both[] = {p1, p2};
  const ad::Var swapped_parts[] = {p2, p1};
  const ad::Var p = ad::concat(both, 0);
  const ad::Var swapped = ad::concat(swapped_parts, 0);
  Tensor mask(Shape{rows, rows});
  for (std::size_t i = 0; i < rows; ++i) mask[i * rows + i] = kMasked;
  const ad::Var logits = ad::matmul(p, ad::transpose(p)) * (1.0 / temperature) + g.constant(std::move(mask));
  const ad::Var positive = ad::dot_last(p, swapped) * (1.0 / temperature);
  return ad::mean(ad::logsumexp(logits) - positive);
}

ad::Var selective_additive(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                           std::span<const ad::Var> weights) {
  return gated_alignment(z1, z2, weights, true);
}

ad::Var selective_multiplicative(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                                 std::span<const ad::Var> weights) {
  return gated_alignment(z1, z2, weights, false);
}

std::vector<std::size_t> anchor_eligible(std::span<const AugmentationFamily> f1,
                                         std::span<const AugmentationFamily> f2, std::size_t factor,
                                         std::size_t factors) {
  if (f1.size() != f2.size()) throw ShapeError("anchor_eligible: family tag lists differ in length");
  const auto bound = [&](AugmentationFamily f) {
    const auto slot = anchor_slot(f);
    return slot && *slot % factors == factor;
  };
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < f1.size(); ++i)
    if (bound(f1[i]) || bound(f2[i])) rows.push_back(i);
  return rows;
}

ad::Var anchor_loss(std::span<const ad::Var> z1, std::span<const ad::Var> z2,
                    std::span<const AugmentationFamily> f1, std::span<const AugmentationFamily> f2,
                    double temperature) {
  check_factors(z1, z2, z2.size());
  ad::Graph& g = *z1.front().graph;
  ad::Var acc = zero(g);
  std::size_t used = 0;
  for (std::size_t t = 0; t < z1.size(); ++t) {
    const auto rows = anchor_eligible(f1, f2, t, z1.size());
    if (rows.empty()) continue;
    acc = acc + simclr_ntxent(ad::gather_rows(z1[t], rows), ad::gather_rows(z2[t], rows), temperature);
    ++used;
  }
  return used == 0 ? acc : acc * (1.0 / static_cast<double>(used));
}

ad::Var diversity_loss(std::span<const ad::Var> z) {
  if (z.empty()) throw ShapeError("diversity_loss: no factors");
  ad::Graph& g = *z.front().graph;
  if (z.size() < 2) return zero(g);
  ad::Var acc = zero(g);
  std::size_t pairs = 0;
  for (std::size_t s = 0; s < z.size(); ++s) {
    for (std::size_t t = s + 1; t < z.size(); ++t) {
      const ad::Var c = ad::dot_last(z[s], z[t]);
      acc = acc + ad::mean(c * c);
      ++pairs;
    }
  }
  return acc * (1.0 / static_cast<double>(pairs));
}

ad::Var kl_uniform_dirichlet(std::span<const ad::Var> alphas, double c) {
  if (alphas.empty()) throw ShapeError("kl_uniform_dirichlet: no inputs");
  if (!(c > 0.0)) throw DomainError("kl_uniform_dirichlet: prior concentration must be positive");
  ad::Graph& g = *alphas.front().graph;
  ad::Var acc = zero(g);
  for (const ad::Var& a : alphas) {
    const double m = static_cast<double>(a.shape().back());
    const double prior_norm = -special::log_gamma(m * c) + m * special::log_gamma(c);
    const ad::Var strength = ad::sum_last(a, true);
    const ad::Var lead = ad::reshape(ad::log_gamma(strength), Shape{a.shape()[0]});
    const ad::Var cross = ad::sum_last((a + (-c)) * (ad::digamma(a) - ad::digamma(strength)));
    const ad::Var row = lead - ad::sum_last(ad::log_gamma(a)) + cross + prior_norm;
    acc = acc + ad::mean(row);
  }
  return acc * (1.0 / static_cast<double>(alphas.size()));
}

double kl_dirichlet(std::span<const double> alpha, double c) {
  double strength = 0.0;
  for (double a : alpha) {
    if (!(a > 0.0)) throw DomainError("kl_dirichlet: alpha must be positive");
    strength += a;
  }
  const double m = static_cast<double>(alpha.size());
  double kl = special::log_gamma(strength) - special::log_gamma(m * c) + m * special::log_gamma(c);
  const double psi_s = special::digamma(strength);
  for (double a : alpha) kl += -special::log_gamma(a) + (a - c) * (special::digamma(a) - psi_s);
  return kl;
}

ad::Var cross_entropy(ad::Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) throw ShapeError("cross_entropy: logits/labels mismatch");
  Tensor onehot(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= s[1]) {
      throw DomainError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot[i * s[1] + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  const ad::Var picked = ad::sum_last(logits * logits.graph->constant(std::move(onehot)));
  return ad::mean(ad::logsumexp(logits) - picked);
}

ScheduleState ScheduleState::from_config(const ExperimentConfig& config, double epoch) {
  const auto& o = config.objective;
  if (!(o.ramp_start < o.ramp_end)) throw ConfigError("objective.ramp_start must be below objective.ramp_end");
  ScheduleState s;
  s.epoch = epoch;
  s.total_epochs = static_cast<double>(config.train.epochs);
  s.ramp_start = o.ramp_start * s.total_epochs;
  s.ramp_end = o.ramp_end * s.total_epochs;
  s.lambda_sel_max = o.lambda_sel_max;
  s.lambda_min_start = config.gate.lambda_min_start;
  s.lambda_min_end = config.gate.lambda_min_end;
  s.lambda_min_phase_restricted = config.gate.lambda_min_phase_restricted;
  return s;
}

double ramp_fraction(const ScheduleState& s) {
  if (!(s.ramp_start < s.ramp_end)) throw ConfigError("schedule: ramp start must precede ramp end");
  if (s.epoch < s.ramp_start) return 0.0;
  if (s.epoch >= s.ramp_end) return 1.0;
  return (s.epoch - s.ramp_start) / (s.ramp_end - s.ramp_start);
}

double schedule_lambda_min(const ScheduleState& s) {
  double progress = 0.0;
  if (s.lambda_min_phase_restricted) {
    progress = ramp_fraction(s);
  } else {
    if (!(s.total_epochs > 0.0)) throw ConfigError("schedule: total epochs must be positive");
    progress = std::clamp(s.epoch / s.total_epochs, 0.0, 1.0);
  }
  if (progress >= 1.0) return s.lambda_min_end;
  return s.lambda_min_end +
         (s.lambda_min_start - s.lambda_min_end) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

double schedule_lambda_sel(const ScheduleState& s) {
  const double r = ramp_fraction(s);
  return r >= 1.0 ? s.lambda_sel_max : s.lambda_sel_max * r;
}

LossWeights loss_weights(const ObjectiveConfig& o, double lambda_sel) {
  LossWeights w;
  w.selective = lambda_sel;
  w.anchor = o.lambda_anchor;
  w.diversity = o.lambda_div;
  w.aux = o.lambda_aux;
  w.kl = o.lambda_kl;
  return w;
}

double LossBreakdown::recomputed_total(const LossWeights& w) const {
  return w.base * base + w.selective * selective + w.anchor * anchor + w.diversity * diversity + w.aux * aux +
         w.kl * kl;
}

AssembledLoss total_loss(const LossTerms& t, const LossWeights& w, double lambda_min) {
  const ad::Var total = t.base * w.base + t.selective * w.selective + t.anchor * w.anchor +
                        t.diversity * w.diversity + t.aux * w.aux + t.kl * w.kl;
  AssembledLoss out{total, {}};
  LossBreakdown& b = out.breakdown;
  b.base = t.base.value().item();
  b.selective = t.selective.value().item();
  b.anchor = t.anchor.value().item();
  b.diversity = t.diversity.value().item();
  b.aux = t.aux.value().item();
  b.kl = t.kl.value().item();
  b.base_weight = w.base;
  b.lambda_sel = w.selective;
  b.lambda_min = lambda_min;
  b.total = total.value().item();
  return out;
}

}  // namespace tssl
