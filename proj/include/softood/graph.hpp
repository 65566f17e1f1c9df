#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "softood/data.hpp"
#include "softood/numerics.hpp"

namespace softood {

/// One-hot label: the example's intent for IND examples, OOD (index k) for
/// pseudo examples. Test examples have no prior.
SoftLabel prior_label(const Example& example, const IntentSpace& intents);

struct GraphConfig {
  double tau = 0.1;
  double alpha = 0.11;
  bool include_self = false;
  // Keep only the M most similar neighbors (weights renormalized); 0 = all.
  std::size_t top_m = 0;

  void validate() const;
};

/// Fully connected graph over unit embeddings of D_I and D_P. Each node
/// stores the hot index of its one-hot prior label.
class EmbeddingGraph {
 public:
  EmbeddingGraph(std::size_t class_count, GraphConfig config);

  /// Adds a node; z must be unit norm.
  std::size_t add_node(std::string id, Vector z, std::size_t prior_class);

  std::size_t size() const { return z_.size(); }
  std::size_t class_count() const { return classes_; }
  const GraphConfig& config() const { return config_; }
  const Vector& embedding(std::size_t node) const { return z_.at(node); }
  std::size_t prior_class(std::size_t node) const { return prior_.at(node); }
  SoftLabel prior(std::size_t node) const { return one_hot(classes_, prior_.at(node)); }
  std::optional<std::size_t> find(const std::string& id) const;

  struct Weights {
    std::vector<std::size_t> nodes;
    std::vector<double> weights;
  };

  /// a_j = softmax over neighbors of z.z_j / tau. `self` is excluded unless
  /// include_self is set.
  Weights attention_weights(std::span<const double> z, std::optional<std::size_t> self = std::nullopt) const;

  /// alpha * l_p(x) + (1 - alpha) * sum_j a_j l_p(x_j) for the node's own
  /// embedding and prior.
  SoftLabel smoothed_label(std::size_t node) const;

 private:
  std::size_t classes_;
  GraphConfig config_;
  std::vector<std::string> ids_;
  std::vector<Vector> z_;
  std::vector<std::size_t> prior_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Smoothed label for a pseudo example already present in the graph.
SoftLabel graph_smoothed_label(const Example& x, const EmbeddingGraph& graph);

/// Smoothed labels for every pseudo example, keyed by id.
std::map<std::string, SoftLabel> smooth_all(const EmbeddingGraph& graph, const std::vector<Example>& pseudo);

}  // namespace softood
