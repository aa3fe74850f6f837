#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "coughgan/layers.hpp"
#include "coughgan/rng.hpp"
#include "coughgan/tensor.hpp"

namespace coughgan::nn {

/// Sequential chain of layers.
struct Stack {
  std::vector<Layer> layers;

  Stack& add(const LayerSpec& spec, Rng& init_rng);
};

struct StackCache {
  std::vector<LayerCache> layers;
};

/// Gradient accumulator shaped like a stack's parameters: [layer][param].
using StackGrads = std::vector<std::vector<Tensor>>;

StackGrads zero_grads(const Stack& stack);

/// Runs the chain. An empty stack is the identity.
Tensor model_forward(Stack& stack, const Tensor& input, Mode mode, Rng* rng, StackCache& cache,
                     bool update_stats = true);

/// Back-propagates through the chain, adding parameter gradients into
/// `grads`, and returns the gradient with respect to the stack input
/// (empty when `input_grad` is false).
Tensor model_backward(const Stack& stack, const StackCache& cache, const Tensor& grad_output, StackGrads& grads,
                      bool input_grad = true);
/// Input gradient only; parameter gradients are skipped.
Tensor model_backward(const Stack& stack, const StackCache& cache, const Tensor& grad_output);

/// Reference to one named tensor inside a network.
struct ParamRef {
  std::string name;
  Tensor* value;
};

/// A set of named stacks. Models define their own topology on top of it:
/// the trunk/heads networks keep the trunk at index 0 and heads after it.
struct Network {
  std::vector<std::string> names;
  std::vector<Stack> stacks;

  Stack& add_stack(std::string name);
  Stack& stack(const std::string& name);
  const Stack& stack(const std::string& name) const;

  /// Trainable parameters, named "<stack>.<layer>.<kind>.<param>", in a
  /// fixed order.
  std::vector<ParamRef> parameters();
  /// Batchnorm running statistics, named like parameters.
  std::vector<ParamRef> buffers();
  std::size_t parameter_count() const;
};

using NetworkGrads = std::vector<StackGrads>;

NetworkGrads zero_grads(const Network& net);

/// Gradients flattened in Network::parameters() order.
std::vector<const Tensor*> flatten_grads(const NetworkGrads& grads);

/// Shared trunk followed by one or more heads, all fed the trunk output.
struct TrunkHeadsCache {
  StackCache trunk;
  std::vector<StackCache> heads;
};

std::vector<Tensor> trunk_heads_forward(Network& net, const Tensor& input, Mode mode, Rng* rng,
                                        TrunkHeadsCache& cache, bool update_stats = true);

/// `head_grads[i]` is the upstream gradient of head i.
Tensor trunk_heads_backward(const Network& net, const TrunkHeadsCache& cache, const std::vector<Tensor>& head_grads,
                            NetworkGrads& grads, bool input_grad = true);
Tensor trunk_heads_backward(const Network& net, const TrunkHeadsCache& cache, const std::vector<Tensor>& head_grads);

/// Elementwise N(mean, variance) draws.
Tensor gaussian_sample(Rng& rng, const Shape& shape, double mean = 0.0, double variance = 1.0);

}  // namespace coughgan::nn
