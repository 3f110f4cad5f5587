#include "tssl/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tssl/error.hpp"

namespace tssl {

OptimizerState OptimizerState::zeros_like(const ParameterStore& params) {
  OptimizerState s;
  s.momentum.reserve(params.size());
  for (const auto& e : params.entries()) s.momentum.emplace_back(e.value.shape(), 0.0);
  return s;
}

double cosine_learning_rate(double base_lr, double epoch, double total_epochs) {
  if (!(total_epochs > 0.0)) throw DomainError("cosine_learning_rate: total epochs must be positive");
  const double progress = std::clamp(epoch / total_epochs, 0.0, 1.0);
  if (progress >= 1.0) return 0.0;
  return base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

void sgd_step(ParameterStore& params, const std::vector<Tensor>& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.momentum.size() != entries.size()) {
    throw ShapeError("sgd_step: gradient/momentum count does not match parameters");
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = entries[k].value;
    Tensor& v = state.momentum[k];
    const Tensor& g = grads[k];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("sgd_step: shape mismatch for " + entries[k].name);
    }
    if (!g.all_finite()) throw DomainError("sgd_step: non-finite gradient for " + entries[k].name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
      p[i] -= lr * v[i];
    }
  }
  state.learning_rate = lr;
}

}  // namespace tssl
