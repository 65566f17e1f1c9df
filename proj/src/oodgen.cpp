#include "softood/oodgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "softood/error.hpp"
#include "softood/rng.hpp"

namespace softood {

namespace {

constexpr double kVarianceFloor = 1e-9;

std::size_t resolved_count(const PseudoOodConfig& c, std::size_t train_size) {
  return c.count ? c.count : train_size;
}

}  // namespace

std::string to_string(OodMethod m) {
  switch (m) {
    case OodMethod::FeatureMixup: return "fm";
    case OodMethod::OpenDomain: return "os";
    case OodMethod::LatentLowDensity: return "lg";
    case OodMethod::PhraseDistortion: return "pd";
  }
  return "unknown";
}

OodMethod parse_ood_method(const std::string& s) {
  for (auto m : {OodMethod::FeatureMixup, OodMethod::OpenDomain, OodMethod::LatentLowDensity,
                 OodMethod::PhraseDistortion})
    if (to_string(m) == s) return m;
  if (s == "pd-ingest") return OodMethod::PhraseDistortion;
  throw Error("invalid_config", "unknown pseudo-OOD method '" + s + "'");
}

void PseudoOodConfig::validate() const {
  if (!(lambda_lo > 0.0 && lambda_lo <= lambda_hi && lambda_hi < 1.0))
    throw Error("invalid_config", "mixup lambda range must satisfy 0 < lo <= hi < 1");
  if (!(rejection_quantile > 0.0 && rejection_quantile < 1.0))
    throw Error("invalid_config", "rejection quantile must lie in (0, 1)");
}

std::vector<Example> feature_mixup(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                   std::vector<MixupRecord>* records) {
  config.validate();
  if (ind_train.empty()) throw Error("invalid_dataset", "feature mixup needs training examples");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ind_train.size(); ++i) {
    if (!ind_train[i].label.is_intent()) throw Error("invalid_dataset", "feature mixup takes IND examples only");
    by_class[ind_train[i].label.intent].push_back(i);
  }
  if (config.cross_class_only && by_class.size() < 2)
    throw Error("invalid_dataset", "cross-class mixup needs at least two IND classes");

  const std::size_t n = resolved_count(config, ind_train.size());
  Rng rng(config.seed);
  std::vector<Example> out;
  out.reserve(n);
  if (records) records->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = rng.index(ind_train.size());
    std::size_t b = rng.index(ind_train.size());
    if (config.cross_class_only) {
      while (ind_train[b].label.intent == ind_train[a].label.intent) b = rng.index(ind_train.size());
    } else {
      while (b == a && ind_train.size() > 1) b = rng.index(ind_train.size());
    }
    const double lambda = rng.uniform(config.lambda_lo, config.lambda_hi);
    Example ex;
    ex.id = "fm-" + std::to_string(config.seed) + "-" + std::to_string(i);
    ex.features.resize(ind_train[a].features.size());
    for (std::size_t d = 0; d < ex.features.size(); ++d)
      ex.features[d] = lambda * ind_train[a].features[d] + (1.0 - lambda) * ind_train[b].features[d];
    ex.label = Label::pseudo();
    ex.provenance = Provenance::PseudoFm;
    out.push_back(std::move(ex));
    if (records) records->push_back({a, b, lambda});
  }
  return out;
}

std::vector<Example> open_domain_sample(const std::vector<Example>& pool, const PseudoOodConfig& config) {
  const std::size_t n = config.count ? config.count : pool.size();
  if (pool.size() < n)
    throw Error("insufficient_examples", "open-domain pool has " + std::to_string(pool.size()) +
                                             " examples, " + std::to_string(n) + " requested");
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(config.seed);
  rng.shuffle(order);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex = pool[order[i]];
    ex.label = Label::pseudo();
    ex.provenance = Provenance::PseudoOs;
    out.push_back(std::move(ex));
  }
  return out;
}

ClassDensityModel::ClassDensityModel(const std::vector<Example>& ind_train) {
  std::map<std::size_t, std::vector<const Example*>> by_class;
  for (const auto& ex : ind_train) {
    if (!ex.label.is_intent()) throw Error("invalid_dataset", "density model takes IND examples only");
    by_class[ex.label.intent].push_back(&ex);
  }
  if (by_class.empty()) throw Error("invalid_dataset", "density model needs training examples");
  const std::size_t dim = ind_train.front().features.size();

  auto fit = [dim](const std::vector<const Example*>& xs, Vector& mean, Vector& var) {
    mean.assign(dim, 0.0);
    var.assign(dim, 0.0);
    for (const auto* x : xs)
      for (std::size_t d = 0; d < dim; ++d) mean[d] += x->features[d];
    for (double& m : mean) m /= static_cast<double>(xs.size());
    for (const auto* x : xs)
      for (std::size_t d = 0; d < dim; ++d) var[d] += (x->features[d] - mean[d]) * (x->features[d] - mean[d]);
    for (double& v : var) v = std::max(v / static_cast<double>(xs.size()), kVarianceFloor);
  };

  std::vector<const Example*> all;
  for (const auto& [cls, xs] : by_class) {
    if (xs.size() < 2) throw Error("invalid_dataset", "density model needs at least two examples per class");
    Vector m, v;
    fit(xs, m, v);
    double ln = 0.0;
    for (double vd : v) ln -= 0.5 * std::log(2.0 * std::numbers::pi * vd);
    means_.push_back(std::move(m));
    vars_.push_back(std::move(v));
    log_norm_.push_back(ln);
    all.insert(all.end(), xs.begin(), xs.end());
  }
  Vector global_var;
  fit(all, pooled_mean_, global_var);
  pooled_var_.assign(dim, 0.0);
  std::size_t c = 0;
  for (const auto& [cls, xs] : by_class) {
    for (std::size_t d = 0; d < dim; ++d)
      pooled_var_[d] += vars_[c][d] * static_cast<double>(xs.size()) / static_cast<double>(all.size());
    ++c;
  }
}

double ClassDensityModel::max_log_density(std::span<const double> x) const {
  double best = -INFINITY;
  for (std::size_t c = 0; c < means_.size(); ++c) {
    double q = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double diff = x[d] - means_[c][d];
      q += diff * diff / vars_[c][d];
    }
    best = std::max(best, log_norm_[c] - 0.5 * q);
  }
  return best;
}

std::vector<Example> latent_lowdensity_sample(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                              LowDensityStats* stats) {
  config.validate();
  ClassDensityModel model(ind_train);

  std::vector<double> train_scores;
  train_scores.reserve(ind_train.size());
  for (const auto& ex : ind_train) train_scores.push_back(model.max_log_density(ex.features));
  std::sort(train_scores.begin(), train_scores.end());
  // lower empirical quantile (nearest rank)
  const auto rank = static_cast<std::size_t>(
      std::ceil(config.rejection_quantile * static_cast<double>(train_scores.size())));
  const double threshold = train_scores[std::clamp<std::size_t>(rank, 1, train_scores.size()) - 1];

  const std::size_t n = resolved_count(config, ind_train.size());
  const std::size_t max_proposals = 1000 * n;
  const auto& mean = model.pooled_mean();
  const auto& var = model.pooled_var();

  Rng rng(config.seed);
  std::vector<Example> out;
  std::size_t proposals = 0;
  Vector x(mean.size());
  while (out.size() < n) {
    if (proposals >= max_proposals)
      throw Error("sampling_failed", "low-density sampler accepted " + std::to_string(out.size()) + " of " +
                                         std::to_string(n) + " after " + std::to_string(proposals) +
                                         " proposals; lower the rejection quantile or check the data");
    ++proposals;
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = mean[d] + std::sqrt(var[d]) * rng.normal();
    if (model.max_log_density(x) < threshold) {
      Example ex;
      ex.id = "lg-" + std::to_string(config.seed) + "-" + std::to_string(out.size());
      ex.features = x;
      ex.label = Label::pseudo();
      ex.provenance = Provenance::PseudoLg;
      out.push_back(std::move(ex));
    }
  }
  if (stats) *stats = {threshold, proposals};
  return out;
}

std::vector<Example> ingest_pd(const std::filesystem::path& file, const DatasetManifest& manifest,
                               const IntentSpace& intents, std::size_t* relabeled) {
  std::size_t count = 0;
  LoadOptions options;
  options.relabel_pseudo = true;
  options.relabeled = &count;
  auto out = load_examples(file, manifest, intents, options);
  if (out.empty()) throw Error("invalid_dataset", file.string() + ": no phrase-distortion examples");
  for (const auto& ex : out)
    if (ex.provenance != Provenance::PseudoPd)
      throw Error("invalid_dataset", file.string() + ": example '" + ex.id + "' is not pseudo-pd");
  if (relabeled) *relabeled = count;
  return out;
}

std::vector<Example> generate_pseudo_ood(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                         const DatasetManifest& manifest, const IntentSpace& intents) {
  switch (config.method) {
    case OodMethod::FeatureMixup: return feature_mixup(ind_train, config);
    case OodMethod::LatentLowDensity: return latent_lowdensity_sample(ind_train, config);
    case OodMethod::OpenDomain: {
      if (config.source.empty()) throw Error("invalid_config", "open-domain sampling needs a source file");
      LoadOptions options;
      options.relabel_pseudo = true;
      auto pool = load_examples(config.source, manifest, intents, options);
      PseudoOodConfig c = config;
      if (!c.count) c.count = std::min(pool.size(), ind_train.size());
      return open_domain_sample(pool, c);
    }
    case OodMethod::PhraseDistortion: {
      if (config.source.empty()) throw Error("invalid_config", "phrase-distortion ingestion needs a source file");
      return ingest_pd(config.source, manifest, intents);
    }
  }
  throw Error("invalid_config", "unknown pseudo-OOD method");
}

}  // namespace softood
