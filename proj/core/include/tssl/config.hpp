#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tssl {

/// Objective variants of the method sweep.
enum class Variant {
  kTrustSslAdditive,
  kTrustSslMultiplicative,
  kScalarUncertainty,
  kCosineGate,
  kSimclrOnly,
};

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);
/// Variants whose gate is read from the evidential heads.
bool has_evidential_gate(Variant v);

struct ModelConfig {
  std::size_t image_size = 32;
  std::array<std::size_t, 3> conv_widths{16, 32, 64};
  std::size_t backbone_dim = 128;   // D
  std::size_t projector_dim = 64;   // P
  std::size_t factors = 6;          // T
  std::size_t factor_dim = 16;      // d
  std::size_t prototypes = 16;      // M
  double prior_strength = 0.05;     // beta
  std::size_t aux_classes = 10;
};

struct GateConfig {
  double alpha = 2.0;
  double gamma = 3.0;
  double epsilon = 0.1;
  double lambda_min_start = 0.5;
  double lambda_min_end = 0.05;
  /// Anneal lambda_min over the selective ramp window only instead of all epochs.
  bool lambda_min_phase_restricted = false;
};

enum class KlPrior { kOnes, kBeta };

struct ObjectiveConfig {
  double temperature = 0.2;
  double anchor_temperature = 0.5;
  double lambda_sel_max = 0.2;
  double ramp_start = 0.5;  // fraction of epochs
  double ramp_end = 0.75;
  double lambda_anchor = 0.05;
  double lambda_div = 0.1;
  double lambda_aux = 0.5;
  double lambda_kl = 0.001;
  KlPrior kl_prior = KlPrior::kOnes;
  /// Weight of the in-graph gated alignment term in the multiplicative variant.
  double multiplicative_weight = 1.0;
};

struct AugmentSettings {
  double corruption_probability = 0.5;
  int max_severity = 3;
  double min_crop_scale = 0.6;
  double flip_probability = 0.5;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "directory"
  std::string path;                  // dataset root with train/ and test/ for "directory"
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  std::size_t num_classes = 8;
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  std::size_t checkpoint_every = 10;
};

struct EvalConfig {
  std::size_t probe_epochs = 50;
  double probe_learning_rate = 0.1;
  std::size_t probe_batch_size = 64;
  double probe_val_fraction = 0.2;
  std::size_t robust_probe_epochs = 50;
  std::size_t ki_pairs = 200;
  std::size_t native_ki_draws = 4;
  double energy_temperature = 1.0;
  int ood_severity = 4;
};

struct ExperimentConfig {
  Variant variant = Variant::kTrustSslAdditive;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::size_t threads = 1;
  DataConfig data;
  ModelConfig model;
  GateConfig gate;
  ObjectiveConfig objective;
  AugmentSettings augment;
  TrainConfig train;
  EvalConfig eval;
};

/// Parse a JSON document; unknown keys, wrong types and out-of-range values
/// raise ConfigError naming the offending key path.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON (sorted keys, every field present).
std::string to_json(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);
/// SHA-256 hex digest of to_json(config).
std::string config_hash(const ExperimentConfig& config);
std::string sha256_hex(std::string_view bytes);

}  // namespace tssl
