#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coughgan/network.hpp"
#include "coughgan/tensor.hpp"

namespace coughgan::nn {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> m;  // first moments, aligned with the parameter list
  std::vector<Tensor> v;  // second moments
  std::uint64_t step = 0;
};

AdamState make_adam(const AdamOptions& options, std::span<const ParamRef> params);

/// One bias-corrected Adam update. With weight decay the parameters are
/// first shrunk by lr * wd * theta. Throws TrainingError naming the first
/// parameter whose gradient is non-finite; nothing is modified in that case.
void adam_step(AdamState& state, std::span<const ParamRef> params, std::span<const Tensor* const> grads);

}  // namespace coughgan::nn
