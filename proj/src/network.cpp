#include "coughgan/network.hpp"

#include <cmath>

#include "coughgan/error.hpp"

namespace coughgan::nn {

Stack& Stack::add(const LayerSpec& spec, Rng& init_rng) {
  layers.push_back(make_layer(spec, init_rng));
  return *this;
}

StackGrads zero_grads(const Stack& stack) {
  StackGrads g;
  g.reserve(stack.layers.size());
  for (const auto& layer : stack.layers) {
    auto& row = g.emplace_back();
    for (const auto& p : layer.params) row.push_back(Tensor::zeros_like(p));
  }
  return g;
}

Tensor model_forward(Stack& stack, const Tensor& input, Mode mode, Rng* rng, StackCache& cache, bool update_stats) {
  cache.layers.clear();
  cache.layers.reserve(stack.layers.size());
  Tensor x = input;
  for (auto& layer : stack.layers) {
    auto r = forward(layer, x, mode, rng, update_stats);
    x = std::move(r.output);
    cache.layers.push_back(std::move(r.cache));
  }
  return x;
}

namespace {

Tensor backward_chain(const Stack& stack, const StackCache& cache, const Tensor& grad_output, StackGrads* grads,
                      bool input_grad = true) {
  if (cache.layers.size() != stack.layers.size() || (grads && grads->size() != stack.layers.size()))
    throw ContractError("model_backward: cache or gradient buffer does not match the stack");
  Tensor g = grad_output;
  for (std::size_t i = stack.layers.size(); i-- > 0;) {
    auto r = backward(stack.layers[i], cache.layers[i], g, grads != nullptr, input_grad || i > 0);
    if (grads)
      for (std::size_t p = 0; p < r.grad_params.size(); ++p) (*grads)[i][p] += r.grad_params[p];
    g = std::move(r.grad_input);
  }
  return g;
}

Tensor backward_trunk_heads(const Network& net, const TrunkHeadsCache& cache, const std::vector<Tensor>& head_grads,
                            NetworkGrads* grads, bool input_grad = true) {
  if (head_grads.size() + 1 != net.stacks.size() || cache.heads.size() != head_grads.size())
    throw ContractError("trunk_heads_backward: expected one upstream gradient per head");
  if (grads && grads->size() != net.stacks.size())
    throw ContractError("trunk_heads_backward: gradient buffer does not match the network");
  Tensor trunk_grad;
  for (std::size_t h = 0; h < head_grads.size(); ++h) {
    Tensor g = backward_chain(net.stacks[h + 1], cache.heads[h], head_grads[h], grads ? &(*grads)[h + 1] : nullptr);
    if (trunk_grad.empty()) {
      trunk_grad = std::move(g);
    } else {
      trunk_grad += g;
    }
  }
  return backward_chain(net.stacks[0], cache.trunk, trunk_grad, grads ? &(*grads)[0] : nullptr, input_grad);
}

}  // namespace

Tensor model_backward(const Stack& stack, const StackCache& cache, const Tensor& grad_output, StackGrads& grads,
                      bool input_grad) {
  return backward_chain(stack, cache, grad_output, &grads, input_grad);
}

Tensor model_backward(const Stack& stack, const StackCache& cache, const Tensor& grad_output) {
  return backward_chain(stack, cache, grad_output, nullptr);
}

Stack& Network::add_stack(std::string name) {
  names.push_back(std::move(name));
  return stacks.emplace_back();
}

Stack& Network::stack(const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return stacks[i];
  throw ContractError("network has no stack named '" + name + "'");
}

const Stack& Network::stack(const std::string& name) const {
  return const_cast<Network*>(this)->stack(name);
}

namespace {

template <typename Select>
std::vector<ParamRef> enumerate(Network& net, Select select) {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < net.stacks.size(); ++s) {
    auto& layers = net.stacks[s].layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto [tensors, names] = select(layers[l]);
      for (std::size_t p = 0; p < tensors->size(); ++p) {
        out.push_back({net.names[s] + "." + std::to_string(l) + "." + to_string(layers[l].spec.kind) + "." + names[p],
                       &(*tensors)[p]});
      }
    }
  }
  return out;
}

}  // namespace

std::vector<ParamRef> Network::parameters() {
  return enumerate(*this, [](Layer& l) { return std::pair{&l.params, param_names(l.spec.kind)}; });
}

std::vector<ParamRef> Network::buffers() {
  return enumerate(*this, [](Layer& l) { return std::pair{&l.buffers, buffer_names(l.spec.kind)}; });
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : stacks)
    for (const auto& l : s.layers)
      for (const auto& p : l.params) n += p.size();
  return n;
}

NetworkGrads zero_grads(const Network& net) {
  NetworkGrads g;
  for (const auto& s : net.stacks) g.push_back(zero_grads(s));
  return g;
}

std::vector<const Tensor*> flatten_grads(const NetworkGrads& grads) {
  std::vector<const Tensor*> out;
  for (const auto& s : grads)
    for (const auto& l : s)
      for (const auto& p : l) out.push_back(&p);
  return out;
}

std::vector<Tensor> trunk_heads_forward(Network& net, const Tensor& input, Mode mode, Rng* rng,
                                        TrunkHeadsCache& cache, bool update_stats) {
  if (net.stacks.size() < 2) throw ContractError("trunk/heads network needs a trunk and at least one head");
  const Tensor features = model_forward(net.stacks[0], input, mode, rng, cache.trunk, update_stats);
  cache.heads.assign(net.stacks.size() - 1, {});
  std::vector<Tensor> outputs;
  for (std::size_t h = 1; h < net.stacks.size(); ++h)
    outputs.push_back(model_forward(net.stacks[h], features, mode, rng, cache.heads[h - 1], update_stats));
  return outputs;
}

Tensor trunk_heads_backward(const Network& net, const TrunkHeadsCache& cache, const std::vector<Tensor>& head_grads,
                            NetworkGrads& grads, bool input_grad) {
  return backward_trunk_heads(net, cache, head_grads, &grads, input_grad);
}

Tensor trunk_heads_backward(const Network& net, const TrunkHeadsCache& cache, const std::vector<Tensor>& head_grads) {
  return backward_trunk_heads(net, cache, head_grads, nullptr);
}

Tensor gaussian_sample(Rng& rng, const Shape& shape, double mean, double variance) {
  if (!(variance >= 0.0)) throw DomainError("gaussian_sample: negative variance");
  Tensor t(shape, mean);
  if (variance == 0.0) return t;
  const double sd = std::sqrt(variance);
  for (double& v : t.data()) v = mean + sd * rng.normal();
  return t;
}

}  // namespace coughgan::nn
