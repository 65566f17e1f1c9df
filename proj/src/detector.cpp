#include "softood/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "softood/error.hpp"
#include "softood/eval.hpp"

namespace softood {

namespace {

double softplus(double w) { return w > 30.0 ? w : std::log1p(std::exp(w)); }
double inverse_softplus(double b) { return b > 30.0 ? b : std::log(std::expm1(b)); }
double sigmoid(double w) { return 1.0 / (1.0 + std::exp(-w)); }

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double mean_boundary_loss(std::span<const double> d, std::span<const std::size_t> cls, const Vector& radii) {
  double l = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    const double b = radii[cls[n]];
    l += d[n] > b ? d[n] - b : b - d[n];
  }
  return l / static_cast<double>(d.size());
}

Vector radii_of(const Vector& w) {
  Vector r(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) r[c] = softplus(w[c]);
  return r;
}

}  // namespace

BoundaryLoss boundary_loss(std::span<const double> distances, std::span<const std::size_t> classes,
                           const Vector& logits) {
  BoundaryLoss out;
  const Vector r = radii_of(logits);
  out.value = mean_boundary_loss(distances, classes, r);
  out.grad.assign(logits.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(distances.size());
  for (std::size_t n = 0; n < distances.size(); ++n) {
    const std::size_t c = classes[n];
    out.grad[c] += (distances[n] > r[c] ? -1.0 : 1.0) * inv_n;
  }
  for (std::size_t c = 0; c < logits.size(); ++c) out.grad[c] *= sigmoid(logits[c]);
  return out;
}

SoftLabel avg_predict(const DetectorModel& model, std::span<const double> features) {
  const Vector f = model.net.encode(features);
  SoftLabel p = head_predict(model.heads.g1, f);
  if (!model.heads.dual) return p;
  const SoftLabel q = head_predict(model.heads.g2, f);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = (p[i] + q[i]) / 2.0;
  return p;
}

std::vector<Vector> fit_centroids(const DetectorModel& model, const std::vector<Example>& train_ind,
                                  const std::vector<Example>& pseudo, const IntentSpace& intents, bool ind_only) {
  const std::size_t classes = ind_only ? intents.k() : intents.class_count();
  std::vector<Vector> sums(classes, Vector(model.net.encoder().spec().output_width(), 0.0));
  std::vector<std::size_t> counts(classes, 0);
  auto add = [&](const Example& ex, std::size_t c) {
    const Vector f = model.net.encode(ex);
    for (std::size_t d = 0; d < f.size(); ++d) sums[c][d] += f[d];
    ++counts[c];
  };
  for (const auto& ex : train_ind) add(ex, intents.class_of(ex.label));
  if (!ind_only)
    for (const auto& ex : pseudo) add(ex, intents.ood_index());
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw Error("empty_class", "no examples for class " + std::to_string(c));
    for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

BoundaryFit fit_radii(std::span<const double> distances, std::span<const std::size_t> classes,
                      std::size_t class_count, const BoundaryFitConfig& config) {
  if (distances.empty() || distances.size() != classes.size())
    throw Error("invalid_argument", "boundary fitting needs one class per distance");
  std::vector<double> sum(class_count, 0.0);
  std::vector<std::size_t> count(class_count, 0);
  for (std::size_t n = 0; n < distances.size(); ++n) {
    if (classes[n] >= class_count) throw Error("invalid_argument", "class index out of range");
    sum[classes[n]] += distances[n];
    ++count[classes[n]];
  }

  Vector w(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    double init = config.initial_radius.value_or(count[c] ? sum[c] / static_cast<double>(count[c]) : 1.0);
    w[c] = inverse_softplus(std::max(init, 1e-6));
  }

  // Adam state
  Vector m(class_count, 0.0), v(class_count, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  BoundaryFit best;
  best.radii = radii_of(w);
  best.loss = mean_boundary_loss(distances, classes, best.radii);
  double prev = best.loss;
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    const Vector grad = boundary_loss(distances, classes, w).grad;
    double gnorm = 0.0;
    for (std::size_t c = 0; c < class_count; ++c) {
      gnorm += grad[c] * grad[c];
      m[c] = beta1 * m[c] + (1.0 - beta1) * grad[c];
      v[c] = beta2 * v[c] + (1.0 - beta2) * grad[c] * grad[c];
      const double mh = m[c] / (1.0 - std::pow(beta1, static_cast<double>(it)));
      const double vh = v[c] / (1.0 - std::pow(beta2, static_cast<double>(it)));
      w[c] -= config.lr * mh / (std::sqrt(vh) + eps);
    }
    const Vector next = radii_of(w);
    const double loss = mean_boundary_loss(distances, classes, next);
    best.iterations = it;
    best.final_grad_norm = std::sqrt(gnorm);
    if (loss < best.loss) {
      best.loss = loss;
      best.radii = next;
    }
    if (std::abs(prev - loss) < config.tolerance) {
      best.converged = true;
      break;
    }
    prev = loss;
  }
  return best;
}

BoundaryFit fit_boundaries(const DetectorModel& model, const std::vector<Example>& train_ind,
                           const std::vector<Example>& pseudo, const IntentSpace& intents,
                           const std::vector<Vector>& centroids, const BoundaryFitConfig& config) {
  const bool ind_only = centroids.size() == intents.k();
  if (!ind_only && centroids.size() != intents.class_count())
    throw Error("invalid_argument", "centroid count must be k or k+1");
  std::vector<double> d;
  std::vector<std::size_t> cls;
  auto add = [&](const Example& ex, std::size_t c) {
    d.push_back(distance(model.net.encode(ex), centroids[c]));
    cls.push_back(c);
  };
  for (const auto& ex : train_ind) add(ex, intents.class_of(ex.label));
  if (!ind_only)
    for (const auto& ex : pseudo) add(ex, intents.ood_index());
  return fit_radii(d, cls, centroids.size(), config);
}

double Prediction::max_prob() const { return *std::max_element(distribution.begin(), distribution.end()); }

double Prediction::min_boundary_margin(const Boundaries& b) const {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < distances.size(); ++i) margin = std::min(margin, distances[i] - b.radii[i]);
  return margin;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Prediction detect(const DetectorModel& model, const Boundaries& boundaries, std::span<const double> features) {
  Prediction p;
  const Vector f = model.net.encode(features);
  p.distribution = head_predict(model.heads.g1, f);
  if (model.heads.dual) {
    const SoftLabel q = head_predict(model.heads.g2, f);
    for (std::size_t i = 0; i < q.size(); ++i) p.distribution[i] = (p.distribution[i] + q[i]) / 2.0;
  }
  bool inside_any = false;
  p.distances.reserve(boundaries.size());
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    p.distances.push_back(distance(f, boundaries.centroids[i]));
    if (p.distances.back() <= boundaries.radii[i]) inside_any = true;
  }
  if (!inside_any) {
    p.label = model.class_count - 1;
    p.rejected_by_boundary = true;
  } else {
    p.label = argmax_lowest(p.distribution);
  }
  return p;
}

std::size_t msp_decide(std::span<const double> kway_probs, double threshold) {
  const std::size_t best = argmax_lowest(kway_probs);
  return kway_probs[best] < threshold ? kway_probs.size() : best;
}

MspThreshold choose_msp_threshold(const KWayClassifier& classifier, const std::vector<Example>& valid_ind,
                                  const std::vector<Example>& valid_ood, const IntentSpace& intents) {
  if (valid_ood.empty()) throw Error("invalid_dataset", "MSP threshold selection needs validation OOD examples");
  std::vector<SoftLabel> probs;
  std::vector<std::size_t> gold;
  for (const auto* set : {&valid_ind, &valid_ood}) {
    for (const auto& ex : *set) {
      probs.push_back(classifier.predict(ex.features));
      gold.push_back(intents.class_of(ex.label));
    }
  }
  std::vector<double> maxp;
  for (const auto& p : probs) maxp.push_back(*std::max_element(p.begin(), p.end()));
  std::sort(maxp.begin(), maxp.end());

  MspThreshold best{0.0, -1.0};
  for (int q = 1; q <= 99; ++q) {
    const double pos = q / 100.0 * static_cast<double>(maxp.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, maxp.size() - 1);
    const double theta = maxp[lo] + (pos - static_cast<double>(lo)) * (maxp[hi] - maxp[lo]);
    std::vector<std::size_t> pred;
    for (const auto& p : probs) pred.push_back(msp_decide(p, theta));
    const double f1 = metrics(confusion(gold, pred, intents.k())).f1_all;
    if (f1 > best.valid_f1_all) best = {theta, f1};
  }
  return best;
}

std::vector<std::size_t> msp_baseline(const KWayClassifier& classifier, const std::vector<Example>& valid_ind,
                                      const std::vector<Example>& valid_ood, const std::vector<Example>& test,
                                      const IntentSpace& intents, MspThreshold* chosen) {
  const MspThreshold t = choose_msp_threshold(classifier, valid_ind, valid_ood, intents);
  if (chosen) *chosen = t;
  std::vector<std::size_t> out;
  out.reserve(test.size());
  for (const auto& ex : test) out.push_back(msp_decide(classifier.predict(ex.features), t.threshold));
  return out;
}

}  // namespace softood
