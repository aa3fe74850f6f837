#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "coughgan/adam.hpp"
#include "coughgan/checkpoint.hpp"
#include "coughgan/dataset.hpp"
#include "coughgan/losses.hpp"
#include "coughgan/network.hpp"
#include "coughgan/rng.hpp"

namespace coughgan::acgan {

enum class LabelHead { sigmoid, softmax };

struct GanConfig {
  std::size_t latent_dim = 512;
  std::size_t n_classes = 2;
  std::size_t embedding_dim = 50;
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  double gen_lr = 0.0002;
  double gen_beta1 = 0.5;
  double gen_beta2 = 0.999;
  double disc_lr = 0.0002;
  double disc_beta1 = 0.5;
  double disc_beta2 = 0.999;
  double noise_mean = 0.0;
  double noise_initial_variance = 0.1;
  std::pair<double, double> soft_real_range{0.8, 1.0};
  std::pair<double, double> soft_fake_range{0.0, 0.2};
  std::uint64_t seed = 0;

  // Architecture widths.
  std::vector<std::size_t> disc_filters{32, 64, 128, 256, 512};
  std::size_t gen_noise_channels = 1024;
  std::vector<std::size_t> gen_channels{512, 256};
  double leaky_alpha = 0.2;
  double dropout = 0.5;
  bool disc_first_batchnorm = true;
  LabelHead label_head = LabelHead::sigmoid;

  /// Emit intermediate checkpoints every K epochs; 0 disables.
  std::size_t checkpoint_every = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const GanConfig& cfg);
/// Strict parse: unknown keys and ill-typed values raise ConfigError with
/// the dotted field path under `path`.
GanConfig gan_config_from_json(const nlohmann::json& j, const std::string& path = "gan");

/// Spatial size of the generator's base map and the generated image.
inline constexpr std::size_t kBaseHeight = 16, kBaseWidth = 3;

struct TrunkOptions {
  std::vector<std::size_t> filters;
  double leaky_alpha = 0.2;
  double dropout = 0.5;
  bool first_batchnorm = true;
};

/// 3x3 conv stages (stride 1, then stride 2) each followed by batchnorm,
/// LeakyReLU and dropout, ending in a flatten.
nn::Stack build_conv_trunk(const TrunkOptions& opts, Rng& init_rng);
/// Flattened width of the trunk output for a 1x128x24 input.
std::size_t trunk_features(const std::vector<std::size_t>& filters);

/// Stacks "label", "noise", "body".
struct Generator {
  GanConfig cfg;
  nn::Network net;
};

struct GeneratorCache {
  nn::StackCache label, noise, body;
};

/// Stacks "trunk", "validity", "label".
struct Discriminator {
  GanConfig cfg;
  nn::Network net;
};

struct DiscriminatorOutput {
  Tensor validity;  // [batch, 1]
  Tensor label;     // [batch, n_classes]
};

Generator build_generator(const GanConfig& cfg, Rng& init_rng);
Discriminator build_discriminator(const GanConfig& cfg, Rng& init_rng);

/// `noise` is [batch, latent_dim], `labels` [batch] class indices; returns
/// [batch, 1, 128, 24] images in [-1, 1].
Tensor generator_forward(Generator& g, const Tensor& noise, const Tensor& labels, nn::Mode mode,
                         GeneratorCache& cache, bool update_stats = true);
void generator_backward(const Generator& g, const GeneratorCache& cache, const Tensor& grad_images,
                        nn::NetworkGrads& grads);

DiscriminatorOutput discriminator_forward(Discriminator& d, const Tensor& images, nn::Mode mode, Rng* rng,
                                          nn::TrunkHeadsCache& cache, bool update_stats = true);
/// Returns the gradient with respect to the input images, or an empty
/// tensor when `input_grad` is false.
Tensor discriminator_backward(const Discriminator& d, const nn::TrunkHeadsCache& cache, const Tensor& grad_validity,
                              const Tensor& grad_label, nn::NetworkGrads& grads, bool input_grad = true);

/// v0 * (1 - epoch / (total_epochs - 1)); 0 when total_epochs < 2.
double instance_noise_variance(std::size_t epoch, std::size_t total_epochs, double v0);

enum class LabelKind { real, fake };
double soft_label(LabelKind kind, Rng& rng, const GanConfig& cfg = {});

/// Training state of both networks and their optimizers.
struct GanState {
  Generator gen;
  Discriminator disc;
  nn::AdamState gen_opt;
  nn::AdamState disc_opt;
};

GanState make_gan_state(const GanConfig& cfg);

struct DiscStepResult {
  double real_loss = 0.0;  // validity BCE + class loss on the real batch
  double fake_loss = 0.0;  // same on the generated batch
  double p_real = 0.0;     // mean validity on real inputs
  double p_fake = 0.0;     // mean validity on generated inputs
  double real_class_acc = 0.0;
};

/// One discriminator update on a real batch plus an equally sized
/// generated batch, both perturbed by the epoch's instance noise.
DiscStepResult discriminator_step(GanState& s, const Tensor& real_images, const Tensor& real_labels, std::size_t epoch,
                                  Rng& rng);

/// One generator update through the frozen discriminator. Returns the loss.
double generator_step(GanState& s, std::size_t batch_size, std::size_t epoch, Rng& rng);

/// Class loss of a discriminator label head against one-hot targets.
nn::LossResult label_loss(const GanConfig& cfg, const Tensor& predicted, const Tensor& one_hot_targets);

struct EpochRecord {
  std::size_t epoch = 0;
  double disc_real_loss = 0.0;
  double disc_fake_loss = 0.0;
  double gen_loss = 0.0;
  double p_real = 0.0;
  double p_fake = 0.0;
  double real_class_acc = 0.0;
  double noise_var = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using TrainingHistory = std::vector<EpochRecord>;

std::string history_csv(const TrainingHistory& history);

struct TrainOptions {
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called every cfg.checkpoint_every epochs with the completed epoch count.
  std::function<void(std::size_t, GanState&)> on_checkpoint;
};

struct TrainResult {
  GanState state;
  TrainingHistory history;
};

/// Full schedule: per epoch a seeded shuffle, then for each batch one
/// discriminator step followed by one generator step.
TrainResult train_acgan(const LabeledSet& data, const GanConfig& cfg, const TrainOptions& opts = {});

/// Metadata records kind, config and epoch; entries hold parameters,
/// batchnorm statistics and optimizer state.
ModelCheckpoint generator_checkpoint(GanState& s, std::size_t epoch);
ModelCheckpoint discriminator_checkpoint(GanState& s, std::size_t epoch);
Generator load_generator(const ModelCheckpoint& ckpt);
Discriminator load_discriminator(const ModelCheckpoint& ckpt);

/// Eval-mode conditional generation. Deterministic in `seed`.
LabeledSet synthesize(Generator& gen, int class_label, std::size_t count, std::uint64_t seed);

}  // namespace coughgan::acgan
