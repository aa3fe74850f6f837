#include "coughgan/classifier.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "coughgan/acgan.hpp"
#include "coughgan/error.hpp"
#include "coughgan/json_fields.hpp"
#include "coughgan/losses.hpp"

namespace coughgan::classifier {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Mode;

void ClassifierConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("classifier." + m); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!epochs) fail("epochs must be positive");
  if (!batch_size) fail("batch_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (n_outputs != 1 && n_outputs != 3) fail("n_outputs must be 1 or 3");
  if (filters.empty()) fail("filters must not be empty");
  for (std::size_t f : filters)
    if (!f) fail("filters entries must be positive");
  if (!(leaky_alpha > 0.0)) fail("leaky_alpha must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

nlohmann::json to_json(const ClassifierConfig& c) {
  return {{"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"n_outputs", c.n_outputs},
          {"seed", c.seed},
          {"filters", c.filters},
          {"leaky_alpha", c.leaky_alpha},
          {"dropout", c.dropout},
          {"first_batchnorm", c.first_batchnorm}};
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j, const std::string& path) {
  ClassifierConfig c;
  JsonFields f(j, path);
  f.read("lr", c.lr);
  f.read("epochs", c.epochs);
  f.read("batch_size", c.batch_size);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("weight_decay", c.weight_decay);
  f.read("n_outputs", c.n_outputs);
  f.read("seed", c.seed);
  f.read("filters", c.filters);
  f.read("leaky_alpha", c.leaky_alpha);
  f.read("dropout", c.dropout);
  f.read("first_batchnorm", c.first_batchnorm);
  f.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

Classifier build_classifier(const ClassifierConfig& cfg, Rng& rng) {
  cfg.validate();
  Classifier m{cfg, {}};
  m.net.add_stack("trunk") =
      acgan::build_conv_trunk({cfg.filters, cfg.leaky_alpha, cfg.dropout, cfg.first_batchnorm}, rng);
  auto& head = m.net.add_stack("head");
  head.add(LayerSpec::dense(acgan::trunk_features(cfg.filters), cfg.n_outputs), rng);
  head.add(LayerSpec::activation(cfg.n_outputs == 1 ? LayerKind::sigmoid : LayerKind::softmax), rng);
  return m;
}

Tensor classifier_forward(Classifier& model, const Tensor& images, Mode mode, Rng* rng, nn::TrunkHeadsCache& cache) {
  return std::move(nn::trunk_heads_forward(model.net, images, mode, rng, cache)[0]);
}

nn::LossResult classifier_loss(const ClassifierConfig& cfg, const Tensor& p, const Tensor& labels) {
  if (cfg.n_outputs == 1) return nn::bce_loss(p, labels.reshaped({labels.size(), 1}));
  return nn::categorical_ce_loss(p, one_hot(labels, cfg.n_outputs));
}

std::vector<int> predict_labels(const ClassifierConfig& cfg, const Tensor& p) {
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = p.ptr() + i * cols;
    out[i] = cfg.n_outputs == 1 ? (row[0] >= 0.5 ? 1 : 0)
                                : static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", h.epoch, h.train_loss, h.train_acc, h.val_loss,
                  h.val_acc);
    out += buf;
  }
  return out;
}

namespace {

void check_labels(const LabeledSet& set, const ClassifierConfig& cfg, const char* what) {
  set.validate();
  if (set.empty()) throw DataError(std::string(what) + " set is empty");
  for (int l : set.labels)
    if (static_cast<std::size_t>(l) >= cfg.n_classes())
      throw DataError(std::string(what) + " label " + std::to_string(l) + " outside [0, " +
                      std::to_string(cfg.n_classes()) + ")");
}

struct Pass {
  double loss = 0.0;
  std::vector<int> predicted;
};

/// Eval-mode pass over a whole set in fixed chunks.
Pass infer(Classifier& model, const LabeledSet& set) {
  constexpr std::size_t kChunk = 256;
  Pass p;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    rows.resize(std::min(kChunk, set.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    nn::TrunkHeadsCache cache;
    const Tensor probs = classifier_forward(model, set.images(rows), Mode::eval, nullptr, cache);
    p.loss += classifier_loss(model.cfg, probs, set.label_tensor(rows)).loss * static_cast<double>(rows.size());
    const auto pred = predict_labels(model.cfg, probs);
    p.predicted.insert(p.predicted.end(), pred.begin(), pred.end());
  }
  p.loss /= static_cast<double>(set.size());
  return p;
}

double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

TrainOutput train_classifier(const LabeledSet& train, const LabeledSet& val, const ClassifierConfig& cfg,
                             const std::function<void(const HistoryRow&)>& on_epoch) {
  cfg.validate();
  check_labels(train, cfg, "training");
  check_labels(val, cfg, "validation");

  Rng init(Rng::derive_seed(cfg.seed, "init"));
  Rng rng(Rng::derive_seed(cfg.seed, "train"));
  Classifier model = build_classifier(cfg, init);
  nn::AdamState opt =
      nn::make_adam({cfg.lr, cfg.beta1, cfg.beta2, 1e-7, cfg.weight_decay}, model.net.parameters());

  TrainOutput out{model, model, 0, -1.0, {}, {}};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    HistoryRow row;
    row.epoch = epoch;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Tensor labels = train.label_tensor(rows);
      nn::TrunkHeadsCache cache;
      const Tensor probs = classifier_forward(model, train.images(rows), Mode::train, &rng, cache);
      const auto loss = classifier_loss(cfg, probs, labels);
      if (!std::isfinite(loss.loss))
        throw TrainingError("classifier loss became non-finite in epoch " + std::to_string(epoch));
      row.train_loss += loss.loss * static_cast<double>(rows.size());
      const auto pred = predict_labels(cfg, probs);
      for (std::size_t i = 0; i < rows.size(); ++i) hits += pred[i] == static_cast<int>(labels[i]);
      nn::NetworkGrads grads = nn::zero_grads(model.net);
      nn::trunk_heads_backward(model.net, cache, {loss.grad}, grads, false);
      const auto params = model.net.parameters();
      nn::adam_step(opt, params, nn::flatten_grads(grads));
    }
    row.train_loss /= static_cast<double>(train.size());
    row.train_acc = static_cast<double>(hits) / static_cast<double>(train.size());
    const Pass v = infer(model, val);
    row.val_loss = v.loss;
    row.val_acc = accuracy(val.labels, v.predicted);
    out.history.push_back(row);
    if (row.val_acc > out.best_val_acc) {
      out.best_val_acc = row.val_acc;
      out.best_epoch = epoch;
      out.best_model = model;
    }
    if (on_epoch) on_epoch(row);
  }
  out.final_model = std::move(model);
  out.optimizer = std::move(opt);
  return out;
}

EvalMetrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                     std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("metrics: truth and prediction counts differ");
  if (truth.empty()) throw DataError("metrics: empty test set");
  EvalMetrics m;
  m.count = truth.size();
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) ++m.confusion.at(truth[i]).at(predicted[i]);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    trace += m.confusion[c][c];
    std::size_t predicted_c = 0, actual_c = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      predicted_c += m.confusion[k][c];
      actual_c += m.confusion[c][k];
    }
    m.precision.push_back(predicted_c ? double(m.confusion[c][c]) / double(predicted_c) : 0.0);
    m.recall.push_back(actual_c ? double(m.confusion[c][c]) / double(actual_c) : 0.0);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(m.count);
  return m;
}

nlohmann::json to_json(const EvalMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"confusion", m.confusion}, {"count", m.count},         {"loss", m.loss}};
}

EvalMetrics evaluate(Classifier& model, const LabeledSet& test) {
  check_labels(test, model.cfg, "test");
  const Pass p = infer(model, test);
  EvalMetrics m = metrics_from_predictions(test.labels, p.predicted, model.cfg.n_classes());
  m.loss = p.loss;
  return m;
}

LabeledSet augment_training_set(const LabeledSet& real, const LabeledSet& synthetic, std::uint64_t shuffle_seed) {
  real.validate();
  synthetic.validate();
  if (!synthetic.empty() && synthetic.n_classes != real.n_classes)
    throw DataError("synthetic set has " + std::to_string(synthetic.n_classes) + " classes, real set " +
                    std::to_string(real.n_classes));
  std::vector<std::pair<const LabeledSet*, std::size_t>> rows;
  for (std::size_t i = 0; i < real.size(); ++i) rows.emplace_back(&real, i);
  for (std::size_t i = 0; i < synthetic.size(); ++i) rows.emplace_back(&synthetic, i);
  Rng rng(shuffle_seed);
  rng.shuffle(std::span(rows));
  LabeledSet out;
  out.n_classes = real.n_classes;
  out.values.reserve((real.size() + synthetic.size()) * features::kSpectrogramSize);
  for (const auto& [set, i] : rows) out.add(set->sample(i), set->labels[i], set->provenance[i], set->ids[i]);
  return out;
}

ModelCheckpoint classifier_checkpoint(Classifier& model, const nn::AdamState* opt, std::size_t epoch) {
  ModelCheckpoint ckpt;
  ckpt.metadata = {{"kind", "classifier"}, {"config", to_json(model.cfg)}, {"epoch", epoch}, {"seed", model.cfg.seed}};
  store_network(ckpt, model.net);
  if (opt) {
    const auto params = model.net.parameters();
    store_adam(ckpt, "adam", *opt, params);
  }
  return ckpt;
}

Classifier load_classifier(const ModelCheckpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "classifier") throw FormatError("checkpoint does not hold a classifier");
  if (!ckpt.metadata.contains("config")) throw FormatError("checkpoint metadata lacks a config");
  Rng unused(0);
  Classifier m = build_classifier(classifier_config_from_json(ckpt.metadata.at("config"), "config"), unused);
  restore_network(ckpt, m.net);
  return m;
}

}  // namespace coughgan::classifier
