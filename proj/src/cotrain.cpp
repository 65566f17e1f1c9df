#include "softood/cotrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "softood/error.hpp"
#include "softood/rng.hpp"

namespace softood {

namespace {

// Salts for seeds derived from TrainConfig::seed.
constexpr std::uint64_t kInitSalt = 0x1001;
constexpr std::uint64_t kShuffleSalt = 0x2002;
constexpr std::uint64_t kStepSalt = 0x3003;
constexpr std::uint64_t kTeacherSalt = 0x4004;

// d CE(target, softmax(logits)) / d logits, times scale.
Vector ce_logit_grad(std::span<const double> target, std::span<const double> pred, double scale) {
  const double mass = std::accumulate(target.begin(), target.end(), 0.0);
  Vector g(pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (pred[i] * mass - target[i]) * scale;
  return g;
}

void add_into(Vector& acc, std::span<const double> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

bool touched(const ParamStore& s) {
  return std::any_of(s.blocks.begin(), s.blocks.end(), [](const ParamBlock& b) { return b.has_grad; });
}

OptimizerConfig encoder_optimizer(const TrainConfig& c) {
  return {OptimizerMode::AdamW, c.lr_encoder, 0.9, 0.999, 1e-8, c.weight_decay};
}

OptimizerConfig head_optimizer(const TrainConfig& c) { return {OptimizerMode::Adam, c.lr_heads, 0.9, 0.999, 1e-8, 0.0}; }

MlpSpec encoder_spec(std::size_t input_dim, const ModelConfig& m) {
  MlpSpec s;
  s.widths = {input_dim, m.encoder_hidden, m.feature_dim};
  s.negative_slope = m.negative_slope;
  s.activate_output = true;
  return s;
}

MlpSpec head_spec(std::size_t feature_dim, std::size_t outputs, const ModelConfig& m, double dropout) {
  MlpSpec s;
  s.widths = {feature_dim, m.head_hidden, outputs};
  s.negative_slope = m.negative_slope;
  s.dropout = {dropout, dropout};
  return s;
}

SoftLabel average_heads(const HeadPair& heads, std::span<const double> f) {
  SoftLabel p = head_predict(heads.g1, f);
  if (!heads.dual) return p;
  const SoftLabel q = head_predict(heads.g2, f);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * (p[i] + q[i]);
  return p;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::string to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::Asoul: return "asoul";
    case LabelScheme::OneHot: return "onehot";
    case LabelScheme::AsoulCt: return "asoul-ct";
    case LabelScheme::AsoulGs: return "asoul-gs";
    case LabelScheme::USoul: return "usoul";
    case LabelScheme::KnowD: return "knowd";
  }
  return "unknown";
}

LabelScheme parse_label_scheme(const std::string& s) {
  for (auto v : {LabelScheme::Asoul, LabelScheme::OneHot, LabelScheme::AsoulCt, LabelScheme::AsoulGs,
                 LabelScheme::USoul, LabelScheme::KnowD})
    if (to_string(v) == s) return v;
  throw Error("invalid_config", "unknown label scheme '" + s + "'");
}

bool uses_graph(LabelScheme s) { return s == LabelScheme::Asoul || s == LabelScheme::AsoulCt; }
bool uses_dual_heads(LabelScheme s) { return s != LabelScheme::AsoulCt; }

void ModelConfig::validate() const {
  if (!encoder_hidden || !feature_dim || !proj_hidden || !proj_dim || !head_hidden)
    throw Error("invalid_config", "model widths must be positive");
  if (!(negative_slope >= 0.0)) throw Error("invalid_config", "negative slope must be >= 0");
}

GraphConfig TrainConfig::graph_config() const {
  return {graph_temperature, alpha, include_self, graph_top_m};
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("invalid_config", "alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error("invalid_config", "beta must lie in [0, 1]");
  if (!(contrastive_temperature > 0.0) || !(graph_temperature > 0.0))
    throw Error("invalid_config", "temperatures must be positive");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw Error("invalid_config", "dropout must lie in [0, 1)");
  if (!(lr_encoder > 0.0) || !(lr_heads > 0.0)) throw Error("invalid_config", "learning rates must be positive");
  if (!batch_ind || !batch_ood) throw Error("invalid_config", "batch sizes must be positive");
  if (patience < 1) throw Error("invalid_config", "patience must be >= 1");
  if (!graph_refresh_every) throw Error("invalid_config", "graph_refresh_every must be >= 1");
  if (!(usoul_epsilon >= 0.0 && usoul_epsilon <= 1.0)) throw Error("invalid_config", "usoul_epsilon must lie in [0, 1]");
}

DetectorModel DetectorModel::create(std::size_t input_dim, std::size_t class_count, const ModelConfig& model,
                                    const TrainConfig& train) {
  model.validate();
  train.validate();
  if (class_count < 2) throw Error("invalid_config", "need at least one IND class plus OOD");
  const std::uint64_t seed = mix_seed(train.seed, kInitSalt);
  EncoderConfig ec = EncoderConfig::make(input_dim, model.encoder_hidden, model.feature_dim, model.proj_hidden,
                                         model.proj_dim, model.negative_slope);
  ec.temperature = train.contrastive_temperature;

  DetectorModel m;
  m.net = EmbeddingNet(ec, seed);
  const MlpSpec hs = head_spec(model.feature_dim, class_count, model, train.head_dropout);
  m.heads.g1 = Mlp(hs, "g1", mix_seed(seed, 11));
  m.heads.g2 = Mlp(hs, "g2", mix_seed(seed, 12));
  m.heads.dual = uses_dual_heads(train.scheme);
  m.class_count = class_count;
  return m;
}

std::vector<ParamStore*> DetectorModel::encoder_stores() { return {&net.encoder().params()}; }

std::vector<ParamStore*> DetectorModel::all_stores() {
  std::vector<ParamStore*> s{&net.encoder().params(), &net.projection().params(), &heads.g1.params()};
  if (heads.dual) s.push_back(&heads.g2.params());
  return s;
}

SoftLabel head_predict(const Mlp& head, std::span<const double> representation, DropoutSeed dropout) {
  return softmax(head.forward(representation, dropout));
}

DropoutSeed head_dropout_seed(DropoutSeed batch_seed, std::size_t example, std::uint64_t stream) {
  if (!batch_seed) return std::nullopt;
  return mix_seed(mix_seed(*batch_seed, example), stream);
}

SoftLabel lift_to_ood_space(std::span<const double> kway) {
  SoftLabel out(kway.begin(), kway.end());
  out.push_back(0.0);
  return out;
}

SoftLabel make_soft_target(LabelScheme scheme, std::span<const double> head_pred, double beta,
                           const SoftLabel* smoothed, const SoftLabel* teacher, double usoul_epsilon) {
  const std::size_t classes = head_pred.size();
  if (classes < 2) throw Error("invalid_argument", "soft targets need at least two classes");
  const std::size_t ood = classes - 1;
  auto mix = [&](const SoftLabel& anchor, std::span<const double> other) {
    if (anchor.size() != classes) throw Error("dimension_mismatch", "soft target length mismatch");
    SoftLabel out(classes);
    for (std::size_t i = 0; i < classes; ++i) out[i] = beta * anchor[i] + (1.0 - beta) * other[i];
    return out;
  };
  switch (scheme) {
    case LabelScheme::Asoul:
      if (!smoothed) throw Error("missing_label", "asoul target needs a graph-smoothed label");
      return mix(*smoothed, head_pred);
    case LabelScheme::AsoulCt:
      if (!smoothed) throw Error("missing_label", "asoul-ct target needs a graph-smoothed label");
      if (smoothed->size() != classes) throw Error("dimension_mismatch", "soft target length mismatch");
      return *smoothed;
    case LabelScheme::OneHot: return one_hot(classes, ood);
    case LabelScheme::AsoulGs: return mix(one_hot(classes, ood), head_pred);
    case LabelScheme::USoul: {
      SoftLabel out(classes, usoul_epsilon / static_cast<double>(classes - 1));
      out[ood] = 1.0 - usoul_epsilon;
      return out;
    }
    case LabelScheme::KnowD:
      if (!teacher) throw Error("missing_label", "knowd target needs a teacher prediction");
      if ((*teacher)[ood] != 0.0) throw Error("invalid_argument", "lifted teacher prediction must carry no OOD mass");
      return mix(one_hot(classes, ood), *teacher);
  }
  throw Error("invalid_argument", "unknown label scheme");
}

LossResult ind_cls_on_features(HeadPair& heads, std::span<const Vector> features,
                               std::span<const std::size_t> classes, DropoutSeed dropout, double grad_scale) {
  LossResult r;
  r.grad_features.reserve(features.size());
  const double weight = heads.dual ? 0.5 : 1.0;
  for (std::size_t n = 0; n < features.size(); ++n) {
    Vector gf(features[n].size(), 0.0);
    for (int h = 0; h < heads.count(); ++h) {
      Mlp& head = heads.head(h);
      MlpCache cache;
      const SoftLabel p = softmax(head.forward(features[n], head_dropout_seed(dropout, n, heads.stream(h)), &cache));
      const SoftLabel target = one_hot(p.size(), classes[n]);
      r.value += weight * cross_entropy(target, p);
      add_into(gf, head.backward(cache, ce_logit_grad(target, p, weight * grad_scale)));
    }
    r.grad_features.push_back(std::move(gf));
  }
  return r;
}

LossResult co_on_features(HeadPair& heads, std::span<const Vector> features, std::span<const Example> batch,
                          const PseudoTargets& targets, const TrainConfig& config, DropoutSeed dropout,
                          double grad_scale) {
  LossResult r;
  r.grad_features.reserve(features.size());
  auto lookup = [](const std::map<std::string, SoftLabel>& m, const std::string& id) -> const SoftLabel* {
    auto it = m.find(id);
    return it == m.end() ? nullptr : &it->second;
  };
  for (std::size_t n = 0; n < features.size(); ++n) {
    const SoftLabel* smoothed = lookup(targets.smoothed, batch[n].id);
    const SoftLabel* teacher = lookup(targets.teacher, batch[n].id);
    if (uses_graph(config.scheme) && !smoothed)
      throw Error("missing_label", "no smoothed label for pseudo example '" + batch[n].id + "'");

    MlpCache cache[2];
    SoftLabel pred[2];
    for (int h = 0; h < heads.count(); ++h)
      pred[h] = softmax(heads.head(h).forward(features[n], head_dropout_seed(dropout, n, heads.stream(h)), &cache[h]));

    Vector gf(features[n].size(), 0.0);
    if (heads.dual) {
      // target built from head i trains head j != i; targets carry no gradient
      for (int i = 0; i < 2; ++i) {
        const int j = 1 - i;
        const SoftLabel target =
            make_soft_target(config.scheme, pred[i], config.beta, smoothed, teacher, config.usoul_epsilon);
        r.value += 0.5 * cross_entropy(target, pred[j]);
        add_into(gf, heads.head(j).backward(cache[j], ce_logit_grad(target, pred[j], 0.5 * grad_scale)));
      }
    } else {
      const SoftLabel target =
          make_soft_target(config.scheme, pred[0], config.beta, smoothed, teacher, config.usoul_epsilon);
      r.value += cross_entropy(target, pred[0]);
      add_into(gf, heads.g1.backward(cache[0], ce_logit_grad(target, pred[0], grad_scale)));
    }
    r.grad_features.push_back(std::move(gf));
  }
  return r;
}

LossResult ind_cls_loss(DetectorModel& model, std::span<const Example> batch, const IntentSpace& intents,
                        DropoutSeed dropout, double grad_scale) {
  std::vector<Vector> feats(batch.size());
  std::vector<MlpCache> caches(batch.size());
  std::vector<std::size_t> classes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].label.is_intent())
      throw Error("invalid_batch", "IND classification loss got non-IND example '" + batch[i].id + "'");
    classes[i] = intents.class_of(batch[i].label);
    feats[i] = model.net.encode(batch[i].features, &caches[i]);
  }
  LossResult r = ind_cls_on_features(model.heads, feats, classes, dropout, grad_scale);
  for (std::size_t i = 0; i < batch.size(); ++i)
    r.grad_features[i] = model.net.encoder().backward(caches[i], r.grad_features[i]);
  return r;
}

LossResult co_loss(DetectorModel& model, std::span<const Example> batch, const PseudoTargets& targets,
                   const TrainConfig& config, DropoutSeed dropout, double grad_scale) {
  std::vector<Vector> feats(batch.size());
  std::vector<MlpCache> caches(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) feats[i] = model.net.encode(batch[i].features, &caches[i]);
  LossResult r = co_on_features(model.heads, feats, batch, targets, config, dropout, grad_scale);
  for (std::size_t i = 0; i < batch.size(); ++i)
    r.grad_features[i] = model.net.encoder().backward(caches[i], r.grad_features[i]);
  return r;
}

LossBreakdown total_loss(DetectorModel& model, std::span<const Example> ind_batch,
                         std::span<const Example> ood_batch, const IntentSpace& intents,
                         const PseudoTargets& targets, const TrainConfig& config, DropoutSeed dropout) {
  LossBreakdown out;
  const DropoutSeed ind_seed = dropout ? DropoutSeed(mix_seed(*dropout, 0)) : std::nullopt;
  const DropoutSeed ood_seed = dropout ? DropoutSeed(mix_seed(*dropout, 1)) : std::nullopt;

  if (!ind_batch.empty()) {
    const std::size_t n = ind_batch.size();
    const double scale = 1.0 / static_cast<double>(n);
    std::vector<Vector> feats(n);
    std::vector<MlpCache> caches(n);
    std::vector<std::size_t> classes(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!ind_batch[i].label.is_intent())
        throw Error("invalid_batch", "IND batch holds non-IND example '" + ind_batch[i].id + "'");
      classes[i] = intents.class_of(ind_batch[i].label);
      feats[i] = model.net.encode(ind_batch[i].features, &caches[i]);
    }
    std::vector<Vector> grads(n, Vector(feats[0].size(), 0.0));
    if (config.contrastive_enabled() && n >= 2) {
      ContrastiveResult c = contrastive_on_features(model.net.projection(), feats, classes,
                                                    model.net.config().temperature, scale);
      out.contrastive = c.sum * scale;
      out.skipped_anchors = c.skipped_anchors;
      for (std::size_t i = 0; i < n; ++i) add_into(grads[i], c.grad_inputs[i]);
    }
    LossResult cls = ind_cls_on_features(model.heads, feats, classes, ind_seed, scale);
    out.ind_cls = cls.value * scale;
    for (std::size_t i = 0; i < n; ++i) {
      add_into(grads[i], cls.grad_features[i]);
      model.net.encoder().backward(caches[i], grads[i]);
    }
  }

  if (!ood_batch.empty()) {
    const std::size_t m = ood_batch.size();
    const double scale = 1.0 / static_cast<double>(m);
    std::vector<Vector> feats(m);
    std::vector<MlpCache> caches(m);
    for (std::size_t i = 0; i < m; ++i) feats[i] = model.net.encode(ood_batch[i].features, &caches[i]);
    LossResult co = co_on_features(model.heads, feats, ood_batch, targets, config, ood_seed, scale);
    out.co = co.value * scale;
    for (std::size_t i = 0; i < m; ++i) model.net.encoder().backward(caches[i], co.grad_features[i]);
  }
  return out;
}

ValidationStats validate_ind(const DetectorModel& model, const std::vector<Example>& valid,
                             const IntentSpace& intents) {
  if (valid.empty()) throw Error("invalid_dataset", "validation set is empty");
  ValidationStats s;
  const double weight = model.heads.dual ? 0.5 : 1.0;
  std::size_t correct = 0;
  for (const auto& ex : valid) {
    const std::size_t gold = intents.class_of(ex.label);
    const Vector f = model.net.encode(ex);
    for (int h = 0; h < model.heads.count(); ++h) {
      const SoftLabel p = head_predict(model.heads.head(h), f);
      s.loss += weight * -std::log(std::max(p[gold], 1e-12));
    }
    if (argmax(average_heads(model.heads, f)) == gold) ++correct;
  }
  s.loss /= static_cast<double>(valid.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(valid.size());
  return s;
}

EmbeddingGraph build_graph(const DetectorModel& model, const std::vector<Example>& train_ind,
                           const std::vector<Example>& pseudo, const IntentSpace& intents,
                           const GraphConfig& config) {
  EmbeddingGraph g(intents.class_count(), config);
  for (const auto& ex : train_ind) g.add_node(ex.id, model.net.embed(ex).z, intents.class_of(ex.label));
  for (const auto& ex : pseudo) g.add_node(ex.id, model.net.embed(ex).z, intents.ood_index());
  return g;
}

KWayClassifier KWayClassifier::create(std::size_t input_dim, std::size_t k, const ModelConfig& model,
                                      const TrainConfig& train) {
  model.validate();
  const std::uint64_t seed = mix_seed(train.seed, kTeacherSalt);
  KWayClassifier c;
  c.encoder = Mlp(encoder_spec(input_dim, model), "teacher.encoder", mix_seed(seed, 1));
  c.head = Mlp(head_spec(model.feature_dim, k, model, train.head_dropout), "teacher.head", mix_seed(seed, 2));
  return c;
}

SoftLabel KWayClassifier::predict(std::span<const double> features) const {
  return softmax(head.forward(encoder.forward(features)));
}

KWayClassifier train_kway_classifier(const std::vector<Example>& train, const std::vector<Example>& valid,
                                     const IntentSpace& intents, const ModelConfig& model,
                                     const TrainConfig& config) {
  config.validate();
  if (train.empty() || valid.empty()) throw Error("invalid_dataset", "k-way training needs train and valid data");
  KWayClassifier c = KWayClassifier::create(train.front().features.size(), intents.k(), model, config);
  if (config.max_epochs == 0) return c;

  auto valid_loss = [&](const KWayClassifier& m) {
    double loss = 0.0;
    for (const auto& ex : valid) loss += -std::log(std::max(m.predict(ex.features)[ex.label.intent], 1e-12));
    return loss / static_cast<double>(valid.size());
  };

  Rng rng(mix_seed(config.seed, kTeacherSalt + 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  KWayClassifier best = c;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_ind) {
      const std::size_t end = std::min(order.size(), start + config.batch_ind);
      const double scale = 1.0 / static_cast<double>(end - start);
      const std::uint64_t batch_seed = mix_seed(mix_seed(config.seed, kTeacherSalt + 2), step++);
      for (std::size_t b = start; b < end; ++b) {
        const Example& ex = train[order[b]];
        if (!ex.label.is_intent()) throw Error("invalid_batch", "k-way training takes IND examples only");
        MlpCache enc_cache, head_cache;
        const Vector f = c.encoder.forward(ex.features, std::nullopt, &enc_cache);
        const SoftLabel p = softmax(c.head.forward(f, mix_seed(batch_seed, b - start), &head_cache));
        const SoftLabel target = one_hot(p.size(), ex.label.intent);
        const Vector gf = c.head.backward(head_cache, ce_logit_grad(target, p, scale));
        c.encoder.backward(enc_cache, gf);
      }
      optimizer_step(c.encoder.params(), encoder_optimizer(config));
      optimizer_step(c.head.params(), head_optimizer(config));
    }
    const double loss = valid_loss(c);
    if (!std::isfinite(loss)) throw Error("diverged", "k-way classifier diverged in epoch " + std::to_string(epoch));
    const bool improved = best_loss - loss > config.min_improvement;
    if (loss < best_loss) {
      best_loss = loss;
      best = c;
    }
    stale = improved ? 0 : stale + 1;
    if (stale >= config.patience) break;
  }
  return best;
}

std::map<std::string, SoftLabel> teacher_targets(const KWayClassifier& teacher, const std::vector<Example>& pseudo) {
  std::map<std::string, SoftLabel> out;
  for (const auto& ex : pseudo) out.emplace(ex.id, lift_to_ood_space(teacher.predict(ex.features)));
  return out;
}

TrainResult train(const std::vector<Example>& train_ind, const std::vector<Example>& pseudo,
                  const std::vector<Example>& valid, const IntentSpace& intents, const ModelConfig& model_config,
                  const TrainConfig& config, const KWayClassifier* teacher) {
  config.validate();
  if (train_ind.empty()) throw Error("invalid_dataset", "training set is empty");
  if (valid.empty()) throw Error("invalid_dataset", "validation set is empty");

  TrainResult result{DetectorModel::create(train_ind.front().features.size(), intents.class_count(), model_config,
                                           config),
                     {}, 0, 0};
  if (config.max_epochs == 0) return result;

  DetectorModel model = result.model;
  PseudoTargets targets;
  if (config.scheme == LabelScheme::KnowD) {
    if (!teacher) throw Error("missing_label", "knowd training needs a k-way teacher");
    targets.teacher = teacher_targets(*teacher, pseudo);
  }

  Rng rng(mix_seed(config.seed, kShuffleSalt));
  std::vector<std::size_t> ind_order(train_ind.size()), ood_order(pseudo.size());
  std::iota(ind_order.begin(), ind_order.end(), 0);
  std::iota(ood_order.begin(), ood_order.end(), 0);

  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t step = 0;
  const OptimizerConfig enc_opt = encoder_optimizer(config);
  const OptimizerConfig head_opt = head_optimizer(config);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (uses_graph(config.scheme) && epoch % config.graph_refresh_every == 0) {
      const EmbeddingGraph graph = build_graph(model, train_ind, pseudo, intents, config.graph_config());
      targets.smoothed = smooth_all(graph, pseudo);
    }
    rng.shuffle(ind_order);
    rng.shuffle(ood_order);
    std::size_t ood_cursor = 0;

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < ind_order.size(); start += config.batch_ind) {
      const std::size_t end = std::min(ind_order.size(), start + config.batch_ind);
      std::vector<Example> ind_batch, ood_batch;
      for (std::size_t i = start; i < end; ++i) ind_batch.push_back(train_ind[ind_order[i]]);
      for (std::size_t i = 0; i < config.batch_ood && !pseudo.empty(); ++i) {
        // OOD batches cycle through the shuffled pseudo set
        ood_batch.push_back(pseudo[ood_order[ood_cursor]]);
        ood_cursor = (ood_cursor + 1) % pseudo.size();
      }
      const std::uint64_t step_seed = mix_seed(mix_seed(config.seed, kStepSalt), step);
      const LossBreakdown loss = total_loss(model, ind_batch, ood_batch, intents, targets, config, step_seed);
      if (!std::isfinite(loss.total()))
        throw Error("diverged", "non-finite training loss at step " + std::to_string(step));

      optimizer_step(model.net.encoder().params(), enc_opt);
      for (ParamStore* s : {&model.net.projection().params(), &model.heads.g1.params(), &model.heads.g2.params()})
        if (touched(*s)) optimizer_step(*s, head_opt);

      rec.contrastive += loss.contrastive;
      rec.ind_cls += loss.ind_cls;
      rec.co += loss.co;
      rec.skipped_anchors += loss.skipped_anchors;
      ++batches;
      ++step;
    }
    rec.contrastive /= static_cast<double>(batches);
    rec.ind_cls /= static_cast<double>(batches);
    rec.co /= static_cast<double>(batches);

    const ValidationStats v = validate_ind(model, valid, intents);
    if (!std::isfinite(v.loss)) throw Error("diverged", "non-finite validation loss after step " + std::to_string(step));
    rec.valid_loss = v.loss;
    rec.valid_accuracy = v.accuracy;
    const bool improved = best_loss - v.loss > config.min_improvement;
    if (v.loss < best_loss) {
      best_loss = v.loss;
      result.model = model;
      result.best_epoch = epoch;
    }
    rec.best_valid_loss = best_loss;
    result.history.push_back(rec);
    stale = improved ? 0 : stale + 1;
    if (stale >= config.patience) break;
  }
  result.steps = step;
  return result;
}

}  // namespace softood
