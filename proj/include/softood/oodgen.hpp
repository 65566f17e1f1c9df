#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "softood/data.hpp"

namespace softood {

enum class OodMethod { FeatureMixup, OpenDomain, LatentLowDensity, PhraseDistortion };

std::string to_string(OodMethod m);
OodMethod parse_ood_method(const std::string& s);

struct PseudoOodConfig {
  OodMethod method = OodMethod::FeatureMixup;
  // 0 means "as many as the IND training set".
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double lambda_lo = 0.3;
  double lambda_hi = 0.7;
  bool cross_class_only = true;
  double rejection_quantile = 0.05;
  std::filesystem::path source;  // os / pd input file

  void validate() const;
};

/// Pseudo example built by feature_mixup, with the pair and weight it came from.
struct MixupRecord {
  std::size_t first = 0;
  std::size_t second = 0;
  double lambda = 0.0;
};

/// lambda * f_a + (1 - lambda) * f_b for seeded pairs from distinct classes.
std::vector<Example> feature_mixup(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                   std::vector<MixupRecord>* records = nullptr);

/// Draws `count` examples without replacement from an external pool.
std::vector<Example> open_domain_sample(const std::vector<Example>& pool, const PseudoOodConfig& config);

struct LowDensityStats {
  double log_density_threshold = 0.0;  // q-quantile of training max log-densities
  std::size_t proposals = 0;
};

/// Rejection sampling from a Gaussian at the global mean with the pooled
/// within-class variance, keeping proposals whose best
/// per-class diagonal-Gaussian density lies below the q-quantile of the
/// training points' best densities. Stands in for GAN-based latent sampling.
std::vector<Example> latent_lowdensity_sample(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                              LowDensityStats* stats = nullptr);

/// Highest per-class diagonal-Gaussian log-density at x, for a fitted model.
class ClassDensityModel {
 public:
  explicit ClassDensityModel(const std::vector<Example>& ind_train);
  double max_log_density(std::span<const double> x) const;
  const Vector& pooled_mean() const { return pooled_mean_; }
  /// Count-weighted average of the per-class variances.
  const Vector& pooled_var() const { return pooled_var_; }

 private:
  std::vector<Vector> means_;
  std::vector<Vector> vars_;
  std::vector<double> log_norm_;
  Vector pooled_mean_;
  Vector pooled_var_;
};

/// Loads externally generated phrase-distortion examples. Labels present in
/// the file are dropped; `relabeled` receives how many.
std::vector<Example> ingest_pd(const std::filesystem::path& file, const DatasetManifest& manifest,
                               const IntentSpace& intents, std::size_t* relabeled = nullptr);

/// Dispatches on config.method. `manifest`/`intents` are used to validate
/// external files.
std::vector<Example> generate_pseudo_ood(const std::vector<Example>& ind_train, const PseudoOodConfig& config,
                                         const DatasetManifest& manifest, const IntentSpace& intents);

}  // namespace softood
