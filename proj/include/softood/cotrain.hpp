#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softood/data.hpp"
#include "softood/embedding.hpp"
#include "softood/graph.hpp"
#include "softood/numerics.hpp"

namespace softood {

/// How the training target of a pseudo-OOD example is formed.
enum class LabelScheme {
  Asoul,    // beta * l_g + (1 - beta) * peer head prediction
  OneHot,   // one-hot OOD
  AsoulCt,  // single head, target l_g
  AsoulGs,  // beta * l_p + (1 - beta) * peer head prediction, no graph
  USoul,    // 1 - eps on OOD, eps / k on every IND intent
  KnowD,    // beta * one-hot OOD + (1 - beta) * lifted k-way teacher prediction
};

std::string to_string(LabelScheme s);
LabelScheme parse_label_scheme(const std::string& s);
bool uses_graph(LabelScheme s);
bool uses_dual_heads(LabelScheme s);

/// Network widths. The encoder stands in for a pretrained sentence encoder.
struct ModelConfig {
  std::size_t encoder_hidden = 1024;
  std::size_t feature_dim = 1024;
  std::size_t proj_hidden = 1024;
  std::size_t proj_dim = 128;
  std::size_t head_hidden = 1024;
  double negative_slope = 0.01;

  void validate() const;
};

struct TrainConfig {
  double alpha = 0.11;
  double beta = 0.9;
  double contrastive_temperature = 0.1;  // t
  double graph_temperature = 0.1;        // tau
  double head_dropout = 0.6;
  double lr_encoder = 1e-5;
  double lr_heads = 1e-4;
  double weight_decay = 0.01;  // decoupled, encoder only
  std::size_t batch_ind = 100;
  std::size_t batch_ood = 100;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;
  LabelScheme scheme = LabelScheme::Asoul;
  double usoul_epsilon = 0.1;
  std::size_t graph_refresh_every = 1;
  bool include_self = false;
  std::size_t graph_top_m = 0;
  // Adds the contrastive term; unset means "only for schemes that build the graph".
  std::optional<bool> contrastive;

  bool contrastive_enabled() const { return contrastive.value_or(uses_graph(scheme)); }
  GraphConfig graph_config() const;
  void validate() const;
};

/// g1 and g2. In single-head mode (asoul-ct) only g1 is used.
struct HeadPair {
  Mlp g1;
  Mlp g2;
  bool dual = true;
  // Dropout streams of g1 and g2; exchanging heads exchanges these too.
  std::uint64_t stream1 = 1;
  std::uint64_t stream2 = 2;

  Mlp& head(int i) { return i == 0 ? g1 : g2; }
  const Mlp& head(int i) const { return i == 0 ? g1 : g2; }
  std::uint64_t stream(int i) const { return i == 0 ? stream1 : stream2; }
  int count() const { return dual ? 2 : 1; }
};

struct DetectorModel {
  EmbeddingNet net;
  HeadPair heads;
  std::size_t class_count = 0;  // k + 1

  static DetectorModel create(std::size_t input_dim, std::size_t class_count, const ModelConfig& model,
                              const TrainConfig& train);
  std::vector<ParamStore*> encoder_stores();
  std::vector<ParamStore*> all_stores();
};

/// Softmax over k+1 classes; dropout applies only when a seed is given.
SoftLabel head_predict(const Mlp& head, std::span<const double> representation, DropoutSeed dropout = std::nullopt);

/// Per-example, per-head dropout seed derived from a batch-level seed.
DropoutSeed head_dropout_seed(DropoutSeed batch_seed, std::size_t example, std::uint64_t stream);

/// Target for the peer head. `smoothed` is l_g (asoul, asoul-ct); `teacher`
/// is the k-way teacher prediction lifted to k+1 with zero OOD mass (knowd).
SoftLabel make_soft_target(LabelScheme scheme, std::span<const double> head_pred, double beta,
                           const SoftLabel* smoothed, const SoftLabel* teacher, double usoul_epsilon);

/// Appends a zero OOD entry to a k-way distribution.
SoftLabel lift_to_ood_space(std::span<const double> kway);

/// Per-pseudo-example auxiliary inputs to the co-training target.
struct PseudoTargets {
  std::map<std::string, SoftLabel> smoothed;  // l_g by id
  std::map<std::string, SoftLabel> teacher;   // lifted teacher predictions by id
};

struct LossResult {
  double value = 0.0;  // summed over the batch
  // dL/df per example, scaled by grad_scale; parameter gradients of the heads
  // (and the encoder, for the end-to-end versions) are accumulated.
  std::vector<Vector> grad_features;
};

/// sum_x 1/2 sum_i CE(l_p(x), g_i[f(x)]) over encoder outputs.
LossResult ind_cls_on_features(HeadPair& heads, std::span<const Vector> features,
                               std::span<const std::size_t> classes, DropoutSeed dropout, double grad_scale);

/// sum_x 1/2 [CE(l_s^1, g_2) + CE(l_s^2, g_1)] with targets held constant.
LossResult co_on_features(HeadPair& heads, std::span<const Vector> features, std::span<const Example> batch,
                          const PseudoTargets& targets, const TrainConfig& config, DropoutSeed dropout,
                          double grad_scale);

LossResult ind_cls_loss(DetectorModel& model, std::span<const Example> batch, const IntentSpace& intents,
                        DropoutSeed dropout = std::nullopt, double grad_scale = 1.0);

LossResult co_loss(DetectorModel& model, std::span<const Example> batch, const PseudoTargets& targets,
                   const TrainConfig& config, DropoutSeed dropout = std::nullopt, double grad_scale = 1.0);

struct LossBreakdown {
  double contrastive = 0.0;  // batch means
  double ind_cls = 0.0;
  double co = 0.0;
  std::size_t skipped_anchors = 0;
  double total() const { return contrastive + ind_cls + co; }
};

/// Unweighted sum of the contrastive, IND classification, and co-training
/// terms, each averaged over its batch. Accumulates all gradients.
LossBreakdown total_loss(DetectorModel& model, std::span<const Example> ind_batch,
                         std::span<const Example> ood_batch, const IntentSpace& intents,
                         const PseudoTargets& targets, const TrainConfig& config, DropoutSeed dropout);

/// Mean IND classification loss and accuracy with dropout off.
struct ValidationStats {
  double loss = 0.0;
  double accuracy = 0.0;
};
ValidationStats validate_ind(const DetectorModel& model, const std::vector<Example>& valid, const IntentSpace& intents);

struct EpochRecord {
  std::size_t epoch = 0;
  double contrastive = 0.0;
  double ind_cls = 0.0;
  double co = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  double best_valid_loss = 0.0;
  std::size_t skipped_anchors = 0;
};

struct TrainResult {
  DetectorModel model;  // best-validation snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

/// Softmax classifier over the k IND intents: its own encoder plus one head.
struct KWayClassifier {
  Mlp encoder;
  Mlp head;

  static KWayClassifier create(std::size_t input_dim, std::size_t k, const ModelConfig& model,
                               const TrainConfig& train);
  SoftLabel predict(std::span<const double> features) const;
};

/// Trains the k-way classifier with cross-entropy on IND data (teacher for
/// knowd and the classifier behind the MSP baseline).
KWayClassifier train_kway_classifier(const std::vector<Example>& train, const std::vector<Example>& valid,
                                     const IntentSpace& intents, const ModelConfig& model,
                                     const TrainConfig& config);

/// Lifted teacher predictions for every pseudo example.
std::map<std::string, SoftLabel> teacher_targets(const KWayClassifier& teacher, const std::vector<Example>& pseudo);

/// Embedding graph over the current embeddings of train_ind and pseudo.
EmbeddingGraph build_graph(const DetectorModel& model, const std::vector<Example>& train_ind,
                           const std::vector<Example>& pseudo, const IntentSpace& intents,
                           const GraphConfig& config);

/// Full co-training loop with early stopping on the validation IND loss.
/// `teacher` is required for the knowd scheme.
TrainResult train(const std::vector<Example>& train_ind, const std::vector<Example>& pseudo,
                  const std::vector<Example>& valid, const IntentSpace& intents, const ModelConfig& model_config,
                  const TrainConfig& config, const KWayClassifier* teacher = nullptr);

}  // namespace softood
