#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tssl/config.hpp"
#include "tssl/corruption.hpp"
#include "tssl/dataset.hpp"
#include "tssl/model.hpp"
#include "tssl/tensor.hpp"

namespace tssl {

struct ProbeConfig {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
};

ProbeConfig probe_config(const ExperimentConfig& config, std::size_t epochs);

/// Multinomial logistic regression on standardized features.
struct LinearHead {
  Tensor mean;    // [D]
  Tensor scale;   // [D], 1 / std
  Tensor weight;  // [D, C]
  Tensor bias;    // [C]
  std::size_t classes() const { return bias.size(); }
};

struct ProbeResult {
  std::string dataset;
  double accuracy = 0.0;  // percent, on the evaluation features
  double val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> per_class_accuracy;
  LinearHead head;
};

/// Logits [N, C].
Tensor predict_logits(const LinearHead& head, const Tensor& features);
std::vector<int> predict(const LinearHead& head, const Tensor& features);
double accuracy_percent(const LinearHead& head, const Tensor& features, std::span<const int> labels);
std::vector<double> per_class_accuracy(const LinearHead& head, const Tensor& features, std::span<const int> labels);

/// Trains on (train_features, train_labels) holding out val_fraction for
/// model selection, keeps the best-validation head and reports on the eval set.
ProbeResult linear_probe(const Tensor& train_features, std::span<const int> train_labels,
                         const Tensor& eval_features, std::span<const int> eval_labels, const ProbeConfig& config);

/// Severity columns are 1..5; rows follow corruption_families().
struct RobustnessGrid {
  double clean = 0.0;
  std::array<std::array<double, kMaxSeverity>, kCorruptionCount> accuracy{};

  double at(AugmentationFamily family, int severity) const;
  /// Mean over the given families at one severity.
  double mean_at(std::span<const AugmentationFamily> families, int severity) const;
};

/// Corrupted copy of every image; sample i of cell (f, s) uses a stream
/// derived from (seed, f, s, i).
std::vector<ImageTensor> corrupt_all(const std::vector<ImageTensor>& images, const CorruptionSpec& spec,
                                     std::uint64_t seed);

RobustnessGrid corruption_grid(const ModelConfig& model, const ParameterStore& params, const LinearHead& head,
                               const Dataset& test, std::uint64_t seed);

Tensor dataset_features(const ModelConfig& model, const ParameterStore& params, const Dataset& data);

/// Per-factor conflict and fused ignorance between paired views, each [N, T].
struct PairDiagnostics {
  Tensor conflict;
  Tensor ignorance;
};

/// Requires a variant with evidential heads; raises ConfigError otherwise.
PairDiagnostics pair_diagnostics(const ExperimentConfig& config, const ParameterStore& params,
                                 const std::vector<ImageTensor>& view1, const std::vector<ImageTensor>& view2);

void require_evidential(const ExperimentConfig& config);

struct KIRow {
  std::string family;  // "clean" for the baseline
  int severity = 0;
  double mean_conflict = 0.0;
  double mean_ignorance = 0.0;
};

struct KITrace {
  KIRow baseline;
  std::vector<KIRow> rows;
};

/// Clean first view against a corrupted second view on the first n_pairs
/// test images; per-factor values are averaged over factors, then pairs.
KITrace ki_trajectory(const ExperimentConfig& config, const ParameterStore& params, const Dataset& test,
                      std::size_t n_pairs, std::span<const AugmentationFamily> families,
                      std::span<const int> severities, std::uint64_t seed);

}  // namespace tssl
