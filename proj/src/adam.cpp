#include "coughgan/adam.hpp"

#include <cmath>

#include "coughgan/error.hpp"

namespace coughgan::nn {

AdamState make_adam(const AdamOptions& options, std::span<const ParamRef> params) {
  if (!(options.lr > 0.0) || !(options.beta1 >= 0.0 && options.beta1 < 1.0) ||
      !(options.beta2 >= 0.0 && options.beta2 < 1.0) || !(options.epsilon > 0.0) || !(options.weight_decay >= 0.0))
    throw ConfigError("adam: invalid optimizer options");
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros_like(*p.value));
    s.v.push_back(Tensor::zeros_like(*p.value));
  }
  return s;
}

void adam_step(AdamState& s, std::span<const ParamRef> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size() || params.size() != s.m.size())
    throw ContractError("adam_step: parameter, gradient and moment lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i].value->shape() || s.m[i].shape() != params[i].value->shape())
      throw ShapeError("adam_step: gradient shape " + shape_string(grads[i]->shape()) + " does not match parameter " +
                       params[i].name + " " + shape_string(params[i].value->shape()));
    if (!grads[i]->all_finite()) throw TrainingError("non-finite gradient for parameter " + params[i].name);
  }

  const auto& o = s.options;
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value->data();
    auto g = grads[i]->data();
    auto m = s.m[i].data();
    auto v = s.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      if (o.weight_decay > 0.0) theta[k] -= o.lr * o.weight_decay * theta[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      theta[k] -= o.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + o.epsilon);
    }
  }
}

}  // namespace coughgan::nn
