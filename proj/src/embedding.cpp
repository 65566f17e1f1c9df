#include "softood/embedding.hpp"

#include <cmath>

#include "softood/error.hpp"

namespace softood {

EncoderConfig EncoderConfig::make(std::size_t input_dim, std::size_t encoder_hidden, std::size_t feature_dim,
                                  std::size_t proj_hidden, std::size_t proj_dim, double negative_slope) {
  EncoderConfig c;
  c.encoder.widths = {input_dim, encoder_hidden, feature_dim};
  c.encoder.negative_slope = negative_slope;
  c.encoder.activate_output = true;
  c.projection.widths = {feature_dim, proj_hidden, proj_dim};
  c.projection.negative_slope = negative_slope;
  return c;
}

void EncoderConfig::validate() const {
  encoder.validate();
  projection.validate();
  if (encoder.output_width() != projection.input_width())
    throw Error("invalid_config", "projection input must equal the encoder feature dimension");
  if (!(temperature > 0.0)) throw Error("invalid_config", "contrastive temperature must be positive");
}

EmbeddingNet::EmbeddingNet(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  encoder_ = Mlp(config_.encoder, "encoder", mix_seed(seed, 1));
  projection_ = Mlp(config_.projection, "projection", mix_seed(seed, 2));
}

Vector EmbeddingNet::encode(std::span<const double> features, MlpCache* cache) const {
  return encoder_.forward(features, std::nullopt, cache);
}

Vector EmbeddingNet::project(std::span<const double> representation) const {
  return l2_normalize(projection_.forward(representation));
}

Embedding EmbeddingNet::embed(const Example& x) const { return {project(encode(x)), x.id}; }

ContrastiveResult contrastive_on_embeddings(std::span<const Vector> z, std::span<const std::size_t> labels,
                                            double temperature, double grad_scale) {
  const std::size_t n = z.size();
  if (n < 2) throw Error("invalid_batch", "contrastive loss needs at least two examples");
  if (labels.size() != n) throw Error("dimension_mismatch", "one label per embedding required");
  if (!(temperature > 0.0)) throw Error("invalid_argument", "temperature must be positive");
  const std::size_t dim = z[0].size();

  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = dot(z[i], z[j]) / temperature;

  ContrastiveResult r;
  r.grad_inputs.assign(n, Vector(dim, 0.0));
  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) ++positives;
    if (positives == 0) {
      ++r.skipped_anchors;
      continue;
    }
    // log-sum-exp over A(i) = batch without the anchor
    double mx = -INFINITY;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, sim[i * n + k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      prob[k] = k == i ? 0.0 : std::exp(sim[i * n + k] - mx);
      denom += prob[k];
    }
    const double lse = mx + std::log(denom);
    for (std::size_t k = 0; k < n; ++k) prob[k] /= denom;

    const double inv_pos = 1.0 / static_cast<double>(positives);
    double term = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) term += lse - sim[i * n + j];
    r.sum += term * inv_pos;

    // d(anchor term)/d(s_ik) = prob_k - [k in S(i)] / |S(i)|, and s_ik = z_i.z_k / t
    const double scale = grad_scale / temperature;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double coef = (prob[k] - (labels[k] == labels[i] ? inv_pos : 0.0)) * scale;
      if (coef == 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        r.grad_inputs[i][d] += coef * z[k][d];
        r.grad_inputs[k][d] += coef * z[i][d];
      }
    }
  }
  const std::size_t used = n - r.skipped_anchors;
  r.mean = used ? r.sum / static_cast<double>(used) : 0.0;
  return r;
}

ContrastiveResult contrastive_on_features(Mlp& projection, std::span<const Vector> features,
                                          std::span<const std::size_t> labels, double temperature,
                                          double grad_scale) {
  const std::size_t n = features.size();
  std::vector<MlpCache> caches(n);
  std::vector<Vector> raw(n), z(n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = projection.forward(features[i], std::nullopt, &caches[i]);
    norms[i] = norm2(raw[i]);
    z[i] = l2_normalize(raw[i]);
  }
  ContrastiveResult r = contrastive_on_embeddings(z, labels, temperature, grad_scale);
  for (std::size_t i = 0; i < n; ++i) {
    // through z = v / |v|: dv = (dz - z (z.dz)) / |v|
    const auto& dz = r.grad_inputs[i];
    const double proj = dot(z[i], dz);
    Vector dv(dz.size());
    for (std::size_t d = 0; d < dv.size(); ++d) dv[d] = (dz[d] - z[i][d] * proj) / norms[i];
    r.grad_inputs[i] = projection.backward(caches[i], dv);
  }
  return r;
}

ContrastiveResult contrastive_loss(EmbeddingNet& net, std::span<const Example> batch, double grad_scale) {
  std::vector<Vector> feats(batch.size());
  std::vector<MlpCache> caches(batch.size());
  std::vector<std::size_t> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].label.is_intent())
      throw Error("invalid_batch", "contrastive loss takes IND examples only (" + batch[i].id + ")");
    labels[i] = batch[i].label.intent;
    feats[i] = net.encode(batch[i].features, &caches[i]);
  }
  ContrastiveResult r =
      contrastive_on_features(net.projection(), feats, labels, net.config().temperature, grad_scale);
  for (std::size_t i = 0; i < batch.size(); ++i) r.grad_inputs[i] = net.encoder().backward(caches[i], r.grad_inputs[i]);
  return r;
}

}  // namespace softood
