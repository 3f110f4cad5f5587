#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tssl/autodiff.hpp"
#include "tssl/config.hpp"
#include "tssl/tensor.hpp"

namespace tssl {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered, name-addressable parameter set. Order is the registration order
/// and is part of the checkpoint layout.
class ParameterStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Tensor& operator[](std::string_view name) const;
  Tensor& operator[](std::string_view name);

  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterStore&, const ParameterStore&);

 private:
  std::vector<NamedTensor> entries_;
};

bool operator==(const NamedTensor& a, const NamedTensor& b);

/// Parameter name prefixes, used to freeze or inspect groups.
inline constexpr std::string_view kEncoderPrefix = "encoder.";
inline constexpr std::string_view kProjectorPrefix = "projector.";
inline constexpr std::string_view kFactorPrefix = "factor.";
inline constexpr std::string_view kEvidentialPrefix = "evidential.";
inline constexpr std::string_view kAuxPrefix = "aux.";
inline constexpr std::string_view kCosineGatePrefix = "gate.";

/// Deterministic initialization: uniform fan-in weights, zero biases, and
/// mutually orthogonal factor projection columns.
ParameterStore init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Names of the evidential-head parameters for a config.
std::vector<std::string> evidential_parameter_names(const ModelConfig& config);

using TrainablePredicate = std::function<bool(std::string_view)>;

/// A parameter store bound into one graph. Parameters for which `trainable`
/// returns false enter the graph as constants.
class ModelGraph {
 public:
  ModelGraph(ad::Graph& graph, const ModelConfig& config, const ParameterStore& params,
             const TrainablePredicate& trainable = {});

  ad::Graph& graph() const noexcept { return *graph_; }
  const ModelConfig& config() const noexcept { return config_; }
  ad::Var param(std::string_view name) const;
  /// Graph handle of every parameter, parallel to ParameterStore::entries().
  const std::vector<ad::Var>& vars() const noexcept { return vars_; }

  /// images: [N, 3, S, S] in [0, 1] -> backbone features h: [N, D].
  ad::Var encode(const Tensor& images) const;
  /// Global projector output, rows L2-normalized: [N, P].
  ad::Var project(ad::Var h) const;
  /// T unit-norm factor embeddings, each [N, d].
  std::vector<ad::Var> factorize(ad::Var h) const;
  /// Non-negative evidence for factor t: [N, M].
  ad::Var evidence(ad::Var z, std::size_t factor) const;
  /// Corruption-family logits: [N, 10].
  ad::Var aux_logits(ad::Var h) const;
  /// Per-factor cosine-gate temperatures softplus(rho): [T].
  ad::Var cosine_temperature() const;

 private:
  ad::Var linear(ad::Var x, std::string_view prefix) const;

  ad::Graph* graph_;
  ModelConfig config_;
  const ParameterStore* params_;
  std::vector<ad::Var> vars_;
};

/// Gradient of every parameter, in store order (zeros when unreached).
std::vector<Tensor> collect_gradients(const ModelGraph& model, const ad::GradientMap& grads);

/// Inference helper: backbone features without recording gradients.
Tensor encode_features(const ModelConfig& config, const ParameterStore& params, const Tensor& images,
                       std::size_t batch = 128);

}  // namespace tssl
