#include "coughgan/acgan.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "coughgan/error.hpp"
#include "coughgan/features.hpp"
#include "coughgan/json_fields.hpp"
#include "coughgan/losses.hpp"

namespace coughgan::acgan {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Mode;

void GanConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("gan." + m); };
  if (!latent_dim) fail("latent_dim must be positive");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (!embedding_dim) fail("embedding_dim must be positive");
  if (!epochs) fail("epochs must be positive");
  if (!batch_size) fail("batch_size must be positive");
  for (auto [name, v] : {std::pair{"gen_lr", gen_lr}, {"disc_lr", disc_lr}})
    if (!(v > 0.0)) fail(std::string(name) + " must be positive");
  for (auto [name, v] : {std::pair{"gen_beta1", gen_beta1}, {"gen_beta2", gen_beta2}, {"disc_beta1", disc_beta1},
                         {"disc_beta2", disc_beta2}})
    if (!(v >= 0.0 && v < 1.0)) fail(std::string(name) + " must lie in [0, 1)");
  if (!std::isfinite(noise_mean)) fail("noise_mean must be finite");
  if (!(noise_initial_variance >= 0.0)) fail("noise_initial_variance must be non-negative");
  const auto [flo, fhi] = soft_fake_range;
  const auto [rlo, rhi] = soft_real_range;
  if (!(0.0 <= flo && flo <= fhi && fhi < rlo && rlo <= rhi && rhi <= 1.0))
    fail("soft label ranges must satisfy 0 <= fake < real <= 1");
  if (disc_filters.empty()) fail("disc_filters must not be empty");
  for (std::size_t f : disc_filters)
    if (!f) fail("disc_filters entries must be positive");
  if (!gen_noise_channels) fail("gen_noise_channels must be positive");
  if (gen_channels.size() != 2 || !gen_channels[0] || !gen_channels[1])
    fail("gen_channels must hold two positive widths");
  if (!(leaky_alpha > 0.0)) fail("leaky_alpha must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

nlohmann::json to_json(const GanConfig& c) {
  return {
      {"latent_dim", c.latent_dim},
      {"n_classes", c.n_classes},
      {"embedding_dim", c.embedding_dim},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"gen_lr", c.gen_lr},
      {"gen_beta1", c.gen_beta1},
      {"gen_beta2", c.gen_beta2},
      {"disc_lr", c.disc_lr},
      {"disc_beta1", c.disc_beta1},
      {"disc_beta2", c.disc_beta2},
      {"noise_mean", c.noise_mean},
      {"noise_initial_variance", c.noise_initial_variance},
      {"soft_real_range", {c.soft_real_range.first, c.soft_real_range.second}},
      {"soft_fake_range", {c.soft_fake_range.first, c.soft_fake_range.second}},
      {"seed", c.seed},
      {"disc_filters", c.disc_filters},
      {"gen_noise_channels", c.gen_noise_channels},
      {"gen_channels", c.gen_channels},
      {"leaky_alpha", c.leaky_alpha},
      {"dropout", c.dropout},
      {"disc_first_batchnorm", c.disc_first_batchnorm},
      {"label_head", c.label_head == LabelHead::sigmoid ? "sigmoid" : "softmax"},
      {"checkpoint_every", c.checkpoint_every},
  };
}

GanConfig gan_config_from_json(const nlohmann::json& j, const std::string& path) {
  GanConfig c;
  JsonFields f(j, path);
  f.read("latent_dim", c.latent_dim);
  f.read("n_classes", c.n_classes);
  f.read("embedding_dim", c.embedding_dim);
  f.read("epochs", c.epochs);
  f.read("batch_size", c.batch_size);
  f.read("gen_lr", c.gen_lr);
  f.read("gen_beta1", c.gen_beta1);
  f.read("gen_beta2", c.gen_beta2);
  f.read("disc_lr", c.disc_lr);
  f.read("disc_beta1", c.disc_beta1);
  f.read("disc_beta2", c.disc_beta2);
  f.read("noise_mean", c.noise_mean);
  f.read("noise_initial_variance", c.noise_initial_variance);
  f.read("soft_real_range", c.soft_real_range);
  f.read("soft_fake_range", c.soft_fake_range);
  f.read("seed", c.seed);
  f.read("disc_filters", c.disc_filters);
  f.read("gen_noise_channels", c.gen_noise_channels);
  f.read("gen_channels", c.gen_channels);
  f.read("leaky_alpha", c.leaky_alpha);
  f.read("dropout", c.dropout);
  f.read("disc_first_batchnorm", c.disc_first_batchnorm);
  std::string head = "sigmoid";
  f.read("label_head", head);
  if (head == "sigmoid") {
    c.label_head = LabelHead::sigmoid;
  } else if (head == "softmax") {
    c.label_head = LabelHead::softmax;
  } else {
    throw ConfigError(f.field("label_head") + ": expected \"sigmoid\" or \"softmax\"");
  }
  f.read("checkpoint_every", c.checkpoint_every);
  f.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Architectures

nn::Stack build_conv_trunk(const TrunkOptions& o, Rng& rng) {
  nn::Stack s;
  std::size_t in = 1;
  for (std::size_t i = 0; i < o.filters.size(); ++i) {
    s.add(LayerSpec::conv2d(in, o.filters[i], 3, i == 0 ? 1 : 2), rng);
    if (i > 0 || o.first_batchnorm) s.add(LayerSpec::batchnorm(o.filters[i]), rng);
    s.add(LayerSpec::leaky_relu(o.leaky_alpha), rng);
    s.add(LayerSpec::dropout(o.dropout), rng);
    in = o.filters[i];
  }
  s.add(LayerSpec::flatten(), rng);
  return s;
}

std::size_t trunk_features(const std::vector<std::size_t>& filters) {
  std::size_t h = features::kMels, w = features::kFrames;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const std::size_t stride = i == 0 ? 1 : 2;
    h = nn::conv_output_size(h, 3, stride, nn::Padding::same);
    w = nn::conv_output_size(w, 3, stride, nn::Padding::same);
  }
  return filters.back() * h * w;
}

Generator build_generator(const GanConfig& cfg, Rng& rng) {
  cfg.validate();
  Generator g{cfg, {}};
  const std::size_t base = kBaseHeight * kBaseWidth;
  const std::size_t c = cfg.gen_noise_channels;

  auto& label = g.net.add_stack("label");
  label.add(LayerSpec::embedding(cfg.n_classes, cfg.embedding_dim), rng);
  label.add(LayerSpec::dense(cfg.embedding_dim, base), rng);
  label.add(LayerSpec::flatten({1, kBaseHeight, kBaseWidth}), rng);

  auto& noise = g.net.add_stack("noise");
  noise.add(LayerSpec::dense(cfg.latent_dim, c * base), rng);
  noise.add(LayerSpec::activation(LayerKind::relu), rng);
  noise.add(LayerSpec::flatten({c, kBaseHeight, kBaseWidth}), rng);

  auto& body = g.net.add_stack("body");
  std::size_t in = c + 1;
  for (std::size_t width : cfg.gen_channels) {
    body.add(LayerSpec::conv2d_transpose(in, width, 4, 2), rng);
    body.add(LayerSpec::batchnorm(width), rng);
    body.add(LayerSpec::activation(LayerKind::relu), rng);
    in = width;
  }
  body.add(LayerSpec::conv2d_transpose(in, 1, 4, 2), rng);
  body.add(LayerSpec::activation(LayerKind::tanh), rng);
  return g;
}

Discriminator build_discriminator(const GanConfig& cfg, Rng& rng) {
  cfg.validate();
  Discriminator d{cfg, {}};
  d.net.add_stack("trunk") =
      build_conv_trunk({cfg.disc_filters, cfg.leaky_alpha, cfg.dropout, cfg.disc_first_batchnorm}, rng);
  const std::size_t features = trunk_features(cfg.disc_filters);
  auto& validity = d.net.add_stack("validity");
  validity.add(LayerSpec::dense(features, 1), rng);
  validity.add(LayerSpec::activation(LayerKind::sigmoid), rng);
  auto& label = d.net.add_stack("label");
  label.add(LayerSpec::dense(features, cfg.n_classes), rng);
  label.add(LayerSpec::activation(cfg.label_head == LabelHead::sigmoid ? LayerKind::sigmoid : LayerKind::softmax), rng);
  return d;
}

Tensor generator_forward(Generator& g, const Tensor& noise, const Tensor& labels, Mode mode, GeneratorCache& cache,
                         bool update_stats) {
  require_shape(noise, {noise.dim(0), g.cfg.latent_dim}, "generator noise");
  if (labels.size() != noise.dim(0))
    throw ShapeError("generator: " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(noise.dim(0)));
  const Tensor label_map = nn::model_forward(g.net.stacks[0], labels, mode, nullptr, cache.label, update_stats);
  const Tensor noise_map = nn::model_forward(g.net.stacks[1], noise, mode, nullptr, cache.noise, update_stats);
  return nn::model_forward(g.net.stacks[2], nn::concat_channels(noise_map, label_map), mode, nullptr, cache.body,
                           update_stats);
}

void generator_backward(const Generator& g, const GeneratorCache& cache, const Tensor& grad_images,
                        nn::NetworkGrads& grads) {
  const Tensor joined = nn::model_backward(g.net.stacks[2], cache.body, grad_images, grads[2]);
  auto [grad_noise, grad_label] = nn::split_channels(joined, g.cfg.gen_noise_channels);
  nn::model_backward(g.net.stacks[1], cache.noise, grad_noise, grads[1]);
  nn::model_backward(g.net.stacks[0], cache.label, grad_label, grads[0]);
}

DiscriminatorOutput discriminator_forward(Discriminator& d, const Tensor& images, Mode mode, Rng* rng,
                                          nn::TrunkHeadsCache& cache, bool update_stats) {
  auto heads = nn::trunk_heads_forward(d.net, images, mode, rng, cache, update_stats);
  return {std::move(heads[0]), std::move(heads[1])};
}

Tensor discriminator_backward(const Discriminator& d, const nn::TrunkHeadsCache& cache, const Tensor& grad_validity,
                              const Tensor& grad_label, nn::NetworkGrads& grads, bool input_grad) {
  return nn::trunk_heads_backward(d.net, cache, {grad_validity, grad_label}, grads, input_grad);
}

// ---------------------------------------------------------------------------
// Training

double instance_noise_variance(std::size_t epoch, std::size_t total_epochs, double v0) {
  if (total_epochs < 2) return 0.0;
  if (epoch >= total_epochs) throw DomainError("instance_noise_variance: epoch beyond schedule");
  if (epoch + 1 == total_epochs) return 0.0;
  return v0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs - 1));
}

double soft_label(LabelKind kind, Rng& rng, const GanConfig& cfg) {
  const auto [lo, hi] = kind == LabelKind::real ? cfg.soft_real_range : cfg.soft_fake_range;
  return rng.uniform(lo, hi);
}

GanState make_gan_state(const GanConfig& cfg) {
  Rng init(Rng::derive_seed(cfg.seed, "init"));
  GanState s{build_generator(cfg, init), build_discriminator(cfg, init), {}, {}};
  s.gen_opt = nn::make_adam({cfg.gen_lr, cfg.gen_beta1, cfg.gen_beta2, 1e-7, 0.0}, s.gen.net.parameters());
  s.disc_opt = nn::make_adam({cfg.disc_lr, cfg.disc_beta1, cfg.disc_beta2, 1e-7, 0.0}, s.disc.net.parameters());
  return s;
}

nn::LossResult label_loss(const GanConfig& cfg, const Tensor& predicted, const Tensor& targets) {
  return cfg.label_head == LabelHead::sigmoid ? nn::bce_loss(predicted, targets)
                                              : nn::categorical_ce_loss(predicted, targets);
}

namespace {

void add_noise(Tensor& x, double mean, double variance, Rng& rng) {
  if (variance == 0.0 && mean == 0.0) return;
  x += nn::gaussian_sample(rng, x.shape(), mean, variance);
}

Tensor sample_labels(std::size_t n, std::size_t n_classes, Rng& rng) {
  Tensor t({n});
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(rng.below(n_classes));
  return t;
}

double mean(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0) / double(t.size()); }

void check_finite(double loss, const char* what, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw TrainingError(std::string(what) + " became non-finite in epoch " + std::to_string(epoch));
}

}  // namespace

DiscStepResult discriminator_step(GanState& s, const Tensor& real_images, const Tensor& real_labels,
                                  std::size_t epoch, Rng& rng) {
  const GanConfig& cfg = s.disc.cfg;
  const std::size_t batch = real_images.dim(0);
  if (!batch) throw DataError("discriminator_step: empty batch");
  const double variance = instance_noise_variance(epoch, cfg.epochs, cfg.noise_initial_variance);
  nn::NetworkGrads grads = nn::zero_grads(s.disc.net);
  DiscStepResult r;

  auto pass = [&](Tensor images, const Tensor& labels, LabelKind kind) {
    add_noise(images, cfg.noise_mean, variance, rng);
    Tensor targets({batch, 1});
    for (double& t : targets.data()) t = soft_label(kind, rng, cfg);
    nn::TrunkHeadsCache cache;
    const auto out = discriminator_forward(s.disc, images, Mode::train, &rng, cache);
    const auto adv = nn::bce_loss(out.validity, targets);
    const auto cls = label_loss(cfg, out.label, one_hot(labels, cfg.n_classes));
    discriminator_backward(s.disc, cache, adv.grad, cls.grad, grads, false);
    if (kind == LabelKind::real) {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < batch; ++i) {
        const double* row = out.label.ptr() + i * cfg.n_classes;
        const auto best = static_cast<std::size_t>(std::max_element(row, row + cfg.n_classes) - row);
        correct += best == static_cast<std::size_t>(labels[i]);
      }
      r.real_class_acc = static_cast<double>(correct) / static_cast<double>(batch);
    }
    return std::pair{adv.loss + cls.loss, mean(out.validity)};
  };

  std::tie(r.real_loss, r.p_real) = pass(real_images, real_labels, LabelKind::real);

  const Tensor noise = nn::gaussian_sample(rng, {batch, cfg.latent_dim});
  const Tensor fake_labels = sample_labels(batch, cfg.n_classes, rng);
  GeneratorCache gen_cache;
  Tensor fakes = generator_forward(s.gen, noise, fake_labels, Mode::train, gen_cache, false);
  std::tie(r.fake_loss, r.p_fake) = pass(std::move(fakes), fake_labels, LabelKind::fake);

  check_finite(r.real_loss, "discriminator real loss", epoch);
  check_finite(r.fake_loss, "discriminator fake loss", epoch);
  const auto params = s.disc.net.parameters();
  nn::adam_step(s.disc_opt, params, nn::flatten_grads(grads));
  return r;
}

double generator_step(GanState& s, std::size_t batch_size, std::size_t epoch, Rng& rng) {
  const GanConfig& cfg = s.gen.cfg;
  const Tensor noise = nn::gaussian_sample(rng, {batch_size, cfg.latent_dim});
  const Tensor labels = sample_labels(batch_size, cfg.n_classes, rng);
  GeneratorCache gen_cache;
  const Tensor fakes = generator_forward(s.gen, noise, labels, Mode::train, gen_cache);

  nn::TrunkHeadsCache disc_cache;
  const auto out = discriminator_forward(s.disc, fakes, Mode::train, &rng, disc_cache, false);
  const auto adv = nn::bce_loss(out.validity, Tensor({batch_size, 1}, 1.0));
  const auto cls = label_loss(cfg, out.label, one_hot(labels, cfg.n_classes));
  const double loss = adv.loss + cls.loss;
  check_finite(loss, "generator loss", epoch);

  // The discriminator is frozen here: only the image gradient is needed.
  const Tensor grad_images = nn::trunk_heads_backward(s.disc.net, disc_cache, {adv.grad, cls.grad});
  nn::NetworkGrads gen_grads = nn::zero_grads(s.gen.net);
  generator_backward(s.gen, gen_cache, grad_images, gen_grads);
  const auto params = s.gen.net.parameters();
  nn::adam_step(s.gen_opt, params, nn::flatten_grads(gen_grads));
  return loss;
}

std::string history_csv(const TrainingHistory& history) {
  std::string out = "epoch,disc_real_loss,disc_fake_loss,gen_loss,p_real,p_fake,real_class_acc,noise_var\n";
  char buf[512];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", h.epoch, h.disc_real_loss,
                  h.disc_fake_loss, h.gen_loss, h.p_real, h.p_fake, h.real_class_acc, h.noise_var);
    out += buf;
  }
  return out;
}

TrainResult train_acgan(const LabeledSet& data, const GanConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  data.validate();
  if (data.n_classes != cfg.n_classes)
    throw ConfigError("gan.n_classes is " + std::to_string(cfg.n_classes) + " but the dataset has " +
                      std::to_string(data.n_classes) + " classes");
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (!counts[c]) throw ConfigError("class " + std::to_string(c) + " has no training samples");

  TrainResult result{make_gan_state(cfg), {}};
  GanState& s = result.state;
  Rng rng(Rng::derive_seed(cfg.seed, "train"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min(cfg.batch_size, data.size());
  const std::size_t n_batches = std::max<std::size_t>(1, data.size() / cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.noise_var = instance_noise_variance(epoch, cfg.epochs, cfg.noise_initial_variance);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::span<const std::size_t> rows(order.data() + b * batch, batch);
      const auto d = discriminator_step(s, data.images(rows), data.label_tensor(rows), epoch, rng);
      rec.disc_real_loss += d.real_loss;
      rec.disc_fake_loss += d.fake_loss;
      rec.p_real += d.p_real;
      rec.p_fake += d.p_fake;
      rec.real_class_acc += d.real_class_acc;
      rec.gen_loss += generator_step(s, batch, epoch, rng);
    }
    const double nb = static_cast<double>(n_batches);
    for (double* v : {&rec.disc_real_loss, &rec.disc_fake_loss, &rec.gen_loss, &rec.p_real, &rec.p_fake,
                      &rec.real_class_acc})
      *v /= nb;
    result.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.on_checkpoint && cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0)
      opts.on_checkpoint(epoch + 1, s);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence and synthesis

namespace {

ModelCheckpoint network_checkpoint(const char* kind, const GanConfig& cfg, nn::Network& net,
                                   const nn::AdamState& opt, std::size_t epoch) {
  ModelCheckpoint ckpt;
  ckpt.metadata = {{"kind", kind}, {"config", to_json(cfg)}, {"epoch", epoch}, {"seed", cfg.seed}};
  store_network(ckpt, net);
  const auto params = net.parameters();
  store_adam(ckpt, "adam", opt, params);
  return ckpt;
}

GanConfig checkpoint_config(const ModelCheckpoint& ckpt, const char* kind) {
  if (ckpt.metadata.value("kind", "") != kind)
    throw FormatError(std::string("checkpoint does not hold a ") + kind);
  if (!ckpt.metadata.contains("config")) throw FormatError("checkpoint metadata lacks a config");
  return gan_config_from_json(ckpt.metadata.at("config"), "config");
}

}  // namespace

ModelCheckpoint generator_checkpoint(GanState& s, std::size_t epoch) {
  return network_checkpoint("generator", s.gen.cfg, s.gen.net, s.gen_opt, epoch);
}

ModelCheckpoint discriminator_checkpoint(GanState& s, std::size_t epoch) {
  return network_checkpoint("discriminator", s.disc.cfg, s.disc.net, s.disc_opt, epoch);
}

Generator load_generator(const ModelCheckpoint& ckpt) {
  Rng unused(0);
  Generator g = build_generator(checkpoint_config(ckpt, "generator"), unused);
  restore_network(ckpt, g.net);
  return g;
}

Discriminator load_discriminator(const ModelCheckpoint& ckpt) {
  Rng unused(0);
  Discriminator d = build_discriminator(checkpoint_config(ckpt, "discriminator"), unused);
  restore_network(ckpt, d.net);
  return d;
}

LabeledSet synthesize(Generator& gen, int class_label, std::size_t count, std::uint64_t seed) {
  if (class_label < 0 || static_cast<std::size_t>(class_label) >= gen.cfg.n_classes)
    throw DomainError("synthesize: class " + std::to_string(class_label) + " outside [0, " +
                      std::to_string(gen.cfg.n_classes) + ")");
  if (!count) throw DomainError("synthesize: count must be positive");
  LabeledSet out;
  out.n_classes = gen.cfg.n_classes;
  Rng rng(seed);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t n = std::min(kChunk, count - start);
    const Tensor noise = nn::gaussian_sample(rng, {n, gen.cfg.latent_dim});
    GeneratorCache cache;
    const Tensor images = generator_forward(gen, noise, Tensor({n}, class_label), Mode::eval, cache);
    for (std::size_t i = 0; i < n; ++i) {
      std::span<const double> s(images.ptr() + i * features::kSpectrogramSize, features::kSpectrogramSize);
      out.add(s, class_label, Provenance::synthetic,
              "synthetic-" + std::to_string(class_label) + "-" + std::to_string(start + i));
    }
  }
  return out;
}

}  // namespace coughgan::acgan
