#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tssl/augment.hpp"
#include "tssl/checkpoint.hpp"
#include "tssl/config.hpp"
#include "tssl/dataset.hpp"
#include "tssl/model.hpp"
#include "tssl/objective.hpp"
#include "tssl/optimizer.hpp"

namespace tssl {

/// One row of metrics.jsonl. Contains no timing so that reruns compare equal.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_total = 0.0;
  double mean_base = 0.0;
  double mean_selective = 0.0;
  double mean_conflict = 0.0;
  double mean_ignorance = 0.0;
  double mean_aux = 0.0;
  double lambda_sel = 0.0;
  double lambda_min = 0.0;
  double learning_rate = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
};

/// Two augmented views per sample with their family tags. Images [N, 3, S, S].
struct Batch {
  Tensor view1;
  Tensor view2;
  std::vector<AugmentationFamily> families1;
  std::vector<AugmentationFamily> families2;
};

AugmentConfig augment_config(const ExperimentConfig& config);

/// Views of sample i come from RngStream::derive(seed, epoch, i, view).
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const ExperimentConfig& config,
                 std::size_t epoch);

/// Sample order of an epoch: a Fisher-Yates shuffle seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// The full objective of one minibatch built on `model`'s graph.
AssembledLoss build_loss(const ModelGraph& model, const Batch& batch, const ExperimentConfig& config,
                         double epoch);

struct TrainingState {
  ParameterStore params;
  OptimizerState optimizer;
  std::size_t epochs_completed = 0;
};

TrainingState initial_state(const ExperimentConfig& config);

/// One optimizer step; throws on a non-finite loss.
LossBreakdown train_step(TrainingState& state, const Batch& batch, const ExperimentConfig& config,
                         std::size_t epoch, double learning_rate, std::size_t step_index);

using StepCallback = std::function<void(const StepRecord&)>;

EpochMetrics train_epoch(TrainingState& state, const Dataset& data, const ExperimentConfig& config,
                         std::size_t epoch, const StepCallback& on_step = {});

/// The train or test split named by the config's data section.
Dataset load_split(const ExperimentConfig& config, const std::string& split);

struct PretrainOptions {
  /// Checkpoint to continue from; its epoch count decides where training resumes.
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many completed epochs (used to simulate interruption).
  std::optional<std::size_t> stop_after;
  /// Preloaded training split; loaded from the config when absent.
  const Dataset* train_data = nullptr;
};

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<EpochMetrics> metrics;  // epochs run by this call
};

/// Layout under config.output_dir: metrics.jsonl, steps.jsonl, timing.jsonl,
/// checkpoints/epoch_NNNN.tsslckpt and final.tsslckpt.
PretrainResult run_pretraining(const ExperimentConfig& config, const PretrainOptions& options = {});

std::string to_json_line(const EpochMetrics& m);
std::string to_json_line(const StepRecord& r);
std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path);

}  // namespace tssl
