#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softood/cotrain.hpp"
#include "softood/data.hpp"

namespace softood {

/// (g1[f(x)] + g2[f(x)]) / 2 with dropout off; g1 alone for a single-head model.
SoftLabel avg_predict(const DetectorModel& model, std::span<const double> features);

/// Per-class centroid c_i and radius b_i in the encoder output space.
struct Boundaries {
  std::vector<Vector> centroids;  // k+1 entries, or k when fitted on IND only
  Vector radii;
  std::string dataset_hash;
  std::uint64_t seed = 0;

  std::size_t size() const { return centroids.size(); }
};

/// Mean encoder output per class. IND examples use their labels, pseudo
/// examples form class k (skipped when ind_only).
std::vector<Vector> fit_centroids(const DetectorModel& model, const std::vector<Example>& train_ind,
                                  const std::vector<Example>& pseudo, const IntentSpace& intents,
                                  bool ind_only = false);

struct BoundaryFitConfig {
  double lr = 0.05;
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  // Starting radius for every class; unset starts each class at its mean distance.
  std::optional<double> initial_radius;
};

struct BoundaryFit {
  Vector radii;
  double loss = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double final_grad_norm = 0.0;
};

struct BoundaryLoss {
  double value = 0.0;
  Vector grad;  // with respect to the logits w
};

/// Mean over examples of |d - b_y| with b = softplus(w), and its gradient in w.
BoundaryLoss boundary_loss(std::span<const double> distances, std::span<const std::size_t> classes,
                           const Vector& logits);

/// Fits b_i = softplus(w_i) to minimize the mean over examples of
/// delta (d - b) + (1 - delta)(b - d), delta = [d > b], with adaptive-moment
/// steps. Returns the lowest-loss iterate.
BoundaryFit fit_radii(std::span<const double> distances, std::span<const std::size_t> classes,
                      std::size_t class_count, const BoundaryFitConfig& config = {});

/// Distances ||f(x) - c_y|| for the fitting set, then fit_radii.
BoundaryFit fit_boundaries(const DetectorModel& model, const std::vector<Example>& train_ind,
                           const std::vector<Example>& pseudo, const IntentSpace& intents,
                           const std::vector<Vector>& centroids, const BoundaryFitConfig& config = {});

struct Prediction {
  std::size_t label = 0;  // class index; k is OOD
  SoftLabel distribution;
  Vector distances;
  bool rejected_by_boundary = false;

  double max_prob() const;
  /// min_i (||f(x) - c_i|| - b_i); positive iff outside every boundary.
  double min_boundary_margin(const Boundaries& b) const;
};

/// OOD if f(x) lies outside every boundary, else argmax of the averaged
/// prediction (lowest index on ties; the OOD class can win).
Prediction detect(const DetectorModel& model, const Boundaries& boundaries, std::span<const double> features);

std::size_t argmax_lowest(std::span<const double> v);

struct MspThreshold {
  double threshold = 0.0;
  double valid_f1_all = 0.0;
};

/// Input is OOD iff max softmax < threshold, else the argmax intent.
std::size_t msp_decide(std::span<const double> kway_probs, double threshold);

/// Sweeps 99 quantiles of the validation max-probabilities and keeps the one
/// with the best validation F1-All.
MspThreshold choose_msp_threshold(const KWayClassifier& classifier, const std::vector<Example>& valid_ind,
                                  const std::vector<Example>& valid_ood, const IntentSpace& intents);

std::vector<std::size_t> msp_baseline(const KWayClassifier& classifier, const std::vector<Example>& valid_ind,
                                      const std::vector<Example>& valid_ood, const std::vector<Example>& test,
                                      const IntentSpace& intents, MspThreshold* chosen = nullptr);

}  // namespace softood
