#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "coughgan/adam.hpp"
#include "coughgan/checkpoint.hpp"
#include "coughgan/dataset.hpp"
#include "coughgan/losses.hpp"
#include "coughgan/network.hpp"

namespace coughgan::classifier {

struct ClassifierConfig {
  double lr = 0.002;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::size_t n_outputs = 1;  // 1: binary sigmoid, 3: softmax over three classes
  std::uint64_t seed = 0;

  std::vector<std::size_t> filters{32, 64, 128, 256, 512};
  double leaky_alpha = 0.2;
  double dropout = 0.5;
  bool first_batchnorm = true;

  std::size_t n_classes() const { return n_outputs == 1 ? 2 : n_outputs; }
  void validate() const;
};

nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j, const std::string& path = "classifier");

/// Stacks "trunk" and "head".
struct Classifier {
  ClassifierConfig cfg;
  nn::Network net;
};

Classifier build_classifier(const ClassifierConfig& cfg, Rng& init_rng);

/// [batch, n_outputs] probabilities.
Tensor classifier_forward(Classifier& model, const Tensor& images, nn::Mode mode, Rng* rng,
                          nn::TrunkHeadsCache& cache);

/// Loss of the model output against integer labels: BCE for a single
/// sigmoid output, categorical cross-entropy otherwise.
nn::LossResult classifier_loss(const ClassifierConfig& cfg, const Tensor& probabilities, const Tensor& labels);

/// Predicted class per row: threshold 0.5 for binary, argmax otherwise.
std::vector<int> predict_labels(const ClassifierConfig& cfg, const Tensor& probabilities);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

std::string history_csv(const std::vector<HistoryRow>& history);

struct TrainOutput {
  Classifier final_model;
  Classifier best_model;  // highest validation accuracy, earliest on ties
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  nn::AdamState optimizer;
  std::vector<HistoryRow> history;
};

TrainOutput train_classifier(const LabeledSet& train, const LabeledSet& val, const ClassifierConfig& cfg,
                             const std::function<void(const HistoryRow&)>& on_epoch = {});

struct EvalMetrics {
  double accuracy = 0.0;
  std::vector<double> precision;  // per class; 0 when nothing was predicted
  std::vector<double> recall;     // per class; 0 when the class is absent
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t count = 0;
  double loss = 0.0;
};

nlohmann::json to_json(const EvalMetrics& m);

/// Eval-mode inference over `test`.
EvalMetrics evaluate(Classifier& model, const LabeledSet& test);

/// Metrics from true and predicted labels.
EvalMetrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                     std::size_t n_classes);

/// Real and synthetic samples concatenated, then shuffled with `shuffle_seed`.
LabeledSet augment_training_set(const LabeledSet& real, const LabeledSet& synthetic, std::uint64_t shuffle_seed);

ModelCheckpoint classifier_checkpoint(Classifier& model, const nn::AdamState* opt, std::size_t epoch);
Classifier load_classifier(const ModelCheckpoint& ckpt);

}  // namespace coughgan::classifier
