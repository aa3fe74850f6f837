#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "coughgan/rng.hpp"
#include "coughgan/tensor.hpp"

namespace coughgan::nn {

enum class LayerKind {
  conv2d,
  conv2d_transpose,
  dense,
  embedding,
  batchnorm,
  leaky_relu,
  relu,
  tanh,
  sigmoid,
  softmax,
  dropout,
  flatten,
  concat_channels,
};

std::string to_string(LayerKind kind);

enum class Padding { same, valid };

enum class Mode { train, eval };

/// Layer description. Only the fields relevant to `kind` are read; build
/// specs with the factory functions.
///
/// Tensor layouts: images are [batch, channels, height, width], dense
/// activations [batch, features], embedding input [batch] of class indices.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;

  // conv2d / conv2d_transpose
  std::size_t in_channels = 0;
  std::size_t filters = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride_h = 1, stride_w = 1;
  Padding padding = Padding::same;

  // dense
  std::size_t in_features = 0, out_features = 0;

  // embedding
  std::size_t vocab = 0, embed_dim = 0;

  // batchnorm
  std::size_t channels = 0;
  double epsilon = 1e-5;
  double momentum = 0.99;

  double alpha = 0.2;  // leaky_relu
  double rate = 0.5;   // dropout

  /// flatten: per-sample output shape; empty means one flat feature axis.
  Shape target_shape;

  static LayerSpec conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                          std::size_t stride, Padding padding = Padding::same);
  static LayerSpec conv2d_transpose(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                                    std::size_t stride);
  static LayerSpec dense(std::size_t in_features, std::size_t out_features);
  static LayerSpec embedding(std::size_t vocab, std::size_t dim);
  static LayerSpec batchnorm(std::size_t channels, double epsilon = 1e-5, double momentum = 0.99);
  static LayerSpec leaky_relu(double alpha);
  static LayerSpec activation(LayerKind kind);
  static LayerSpec dropout(double rate);
  static LayerSpec flatten(Shape target_shape = {});
  static LayerSpec concat_channels();
};

/// Throws ConfigError if hyperparameters violate their invariants.
void validate(const LayerSpec& spec);

/// Names of the trainable parameters / non-trainable buffers of a kind, in
/// storage order.
std::vector<std::string> param_names(LayerKind kind);
std::vector<std::string> buffer_names(LayerKind kind);

struct Layer {
  LayerSpec spec;
  std::vector<Tensor> params;   // e.g. weight, bias; gamma, beta
  std::vector<Tensor> buffers;  // batchnorm running mean and variance
};

/// Allocates parameters: Gaussian(0, 0.02) weights, zero biases, unit
/// batchnorm scale, zero shift, running variance 1.
Layer make_layer(const LayerSpec& spec, Rng& init_rng);

/// Saved forward state for backward. Tied to the layer that produced it.
struct LayerCache {
  const Layer* owner = nullptr;
  LayerKind kind = LayerKind::relu;
  Shape input_shape;
  Shape output_shape;
  std::vector<Tensor> saved;
  bool batch_stats = false;  // batchnorm used batch statistics
};

struct ForwardResult {
  Tensor output;
  LayerCache cache;
};

struct BackwardResult {
  Tensor grad_input;
  std::vector<Tensor> grad_params;  // aligned with Layer::params
};

/// Applies one layer. In train mode batchnorm normalizes with batch
/// statistics and, when `update_stats`, folds them into the running
/// averages; dropout draws its mask from `rng` (required in train mode).
ForwardResult forward(Layer& layer, const Tensor& input, Mode mode, Rng* rng, bool update_stats = true);

/// Exact reverse-mode gradient of the matching forward call. With
/// `param_grads` false grad_params is left empty; with `input_grad` false
/// grad_input is left empty.
BackwardResult backward(const Layer& layer, const LayerCache& cache, const Tensor& grad_output,
                        bool param_grads = true, bool input_grad = true);

/// Channel concatenation of two image tensors with equal batch and spatial dims.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits an upstream gradient back into the two concatenated operands.
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::size_t channels_a);

/// Output shape of a sliding-window axis.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);
std::size_t same_padding(std::size_t kernel);

}  // namespace coughgan::nn
