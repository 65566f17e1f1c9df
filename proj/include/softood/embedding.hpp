#pragma once

#include <span>
#include <string>
#include <vector>

#include "softood/data.hpp"
#include "softood/numerics.hpp"

namespace softood {

struct EncoderConfig {
  MlpSpec encoder;     // input_dim -> ... -> feature_dim, rectified output
  MlpSpec projection;  // feature_dim -> ... -> proj_dim, linear output
  double temperature = 0.1;

  /// Encoder input->hidden->feature and projection feature->hidden->proj.
  static EncoderConfig make(std::size_t input_dim, std::size_t encoder_hidden, std::size_t feature_dim,
                            std::size_t proj_hidden, std::size_t proj_dim, double negative_slope = 0.01);
  void validate() const;
};

struct Embedding {
  Vector z;  // unit norm
  std::string owner;
};

/// Shared encoder f and projection head h.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  Mlp& encoder() { return encoder_; }
  const Mlp& encoder() const { return encoder_; }
  Mlp& projection() { return projection_; }
  const Mlp& projection() const { return projection_; }

  /// f(x)
  Vector encode(std::span<const double> features, MlpCache* cache = nullptr) const;
  Vector encode(const Example& x) const { return encode(x.features); }

  /// z = normalize(h(f(x)))
  Embedding embed(const Example& x) const;
  Vector project(std::span<const double> representation) const;

 private:
  EncoderConfig config_;
  Mlp encoder_;
  Mlp projection_;
};

struct ContrastiveResult {
  double sum = 0.0;   // the loss as written: summed over anchors
  double mean = 0.0;  // sum / number of non-skipped anchors
  std::size_t skipped_anchors = 0;
  // Per-example gradient of grad_scale * sum with respect to the input of the
  // stage the loss was evaluated on (embeddings or encoder outputs).
  std::vector<Vector> grad_inputs;
};

/// Supervised contrastive loss over unit embeddings. Anchors without a
/// same-label partner in the batch are skipped.
ContrastiveResult contrastive_on_embeddings(std::span<const Vector> z, std::span<const std::size_t> labels,
                                            double temperature, double grad_scale = 1.0);

/// Same loss starting from encoder outputs: runs h, normalizes, and
/// backpropagates into the projection head (gradients accumulate there).
/// grad_inputs holds dL/df for each example.
ContrastiveResult contrastive_on_features(Mlp& projection, std::span<const Vector> features,
                                          std::span<const std::size_t> labels, double temperature,
                                          double grad_scale = 1.0);

/// End-to-end loss on a batch of IND examples; gradients flow into both the
/// encoder and the projection head.
ContrastiveResult contrastive_loss(EmbeddingNet& net, std::span<const Example> batch, double grad_scale = 1.0);

}  // namespace softood
