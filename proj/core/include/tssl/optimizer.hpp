#pragma once

#include <vector>

#include "tssl/config.hpp"
#include "tssl/model.hpp"
#include "tssl/tensor.hpp"

namespace tssl {

/// Momentum SGD with L2 weight decay:
///   v <- momentum v + (g + wd p);  p <- p - lr v
struct OptimizerState {
  std::vector<Tensor> momentum;  // parallel to ParameterStore::entries()
  double learning_rate = 0.0;    // value used by the last step

  static OptimizerState zeros_like(const ParameterStore& params);
};

/// Cosine decay from base_lr at epoch 0 to zero at total_epochs.
double cosine_learning_rate(double base_lr, double epoch, double total_epochs);

/// Gradients must be finite and parallel to params.entries().
void sgd_step(ParameterStore& params, const std::vector<Tensor>& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay);

}  // namespace tssl
