#pragma once

#include "coughgan/tensor.hpp"

namespace coughgan::nn {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d predictions
};

/// Mean elementwise binary cross-entropy. Predictions are clamped to
/// [1e-7, 1 - 1e-7]; the gradient is zero where the clamp is active.
LossResult bce_loss(const Tensor& predictions, const Tensor& targets);

/// Mean over rows of -sum(t * ln p) for [batch, classes] distributions.
/// Throws DomainError when a row of `probabilities` does not sum to 1
/// within 1e-6 or has a negative entry.
LossResult categorical_ce_loss(const Tensor& probabilities, const Tensor& one_hot_targets);

}  // namespace coughgan::nn
