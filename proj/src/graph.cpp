#include "softood/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "softood/error.hpp"

namespace softood {

SoftLabel prior_label(const Example& example, const IntentSpace& intents) {
  if (example.provenance == Provenance::Test)
    throw Error("invalid_label", "test example '" + example.id + "' has no prior label");
  switch (example.label.kind) {
    case LabelKind::Intent: return one_hot(intents.class_count(), intents.class_of(example.label));
    case LabelKind::Pseudo: return one_hot(intents.class_count(), intents.ood_index());
    case LabelKind::Ood: break;
  }
  throw Error("invalid_label", "example '" + example.id + "' is neither IND nor pseudo");
}

void GraphConfig::validate() const {
  if (!(tau > 0.0)) throw Error("invalid_config", "graph temperature must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("invalid_config", "alpha must lie in [0, 1]");
}

EmbeddingGraph::EmbeddingGraph(std::size_t class_count, GraphConfig config)
    : classes_(class_count), config_(config) {
  config_.validate();
  if (classes_ < 2) throw Error("invalid_config", "graph needs at least one IND class plus OOD");
}

std::size_t EmbeddingGraph::add_node(std::string id, Vector z, std::size_t prior_class) {
  if (prior_class >= classes_) throw Error("invalid_label", "prior class out of range");
  if (!z_.empty() && z.size() != z_.front().size())
    throw Error("dimension_mismatch", "graph embeddings must share one dimension");
  if (std::abs(norm2(z) - 1.0) > 1e-9) throw Error("invalid_argument", "graph embeddings must be unit norm");
  const std::size_t node = z_.size();
  if (!index_.emplace(id, node).second) throw Error("invalid_argument", "duplicate graph node '" + id + "'");
  ids_.push_back(std::move(id));
  z_.push_back(std::move(z));
  prior_.push_back(prior_class);
  return node;
}

std::optional<std::size_t> EmbeddingGraph::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingGraph::Weights EmbeddingGraph::attention_weights(std::span<const double> z,
                                                          std::optional<std::size_t> self) const {
  Weights w;
  w.nodes.reserve(z_.size());
  w.weights.reserve(z_.size());
  for (std::size_t j = 0; j < z_.size(); ++j) {
    if (self && *self == j && !config_.include_self) continue;
    w.nodes.push_back(j);
    w.weights.push_back(dot(z, z_[j]) / config_.tau);
  }
  if (w.nodes.empty()) throw Error("empty_graph", "query has no neighbors in the graph");

  if (config_.top_m && config_.top_m < w.nodes.size()) {
    std::vector<std::size_t> order(w.nodes.size());
    std::iota(order.begin(), order.end(), 0);
    // ties resolved by node index so truncation is deterministic
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w.weights[a] > w.weights[b]; });
    order.resize(config_.top_m);
    std::sort(order.begin(), order.end());
    Weights kept;
    for (auto o : order) {
      kept.nodes.push_back(w.nodes[o]);
      kept.weights.push_back(w.weights[o]);
    }
    w = std::move(kept);
  }
  w.weights = softmax(w.weights, 1.0);
  return w;
}

SoftLabel EmbeddingGraph::smoothed_label(std::size_t node) const {
  if (node >= z_.size()) throw Error("invalid_argument", "node out of range");
  const Weights w = attention_weights(z_[node], node);
  SoftLabel neighbors(classes_, 0.0);
  for (std::size_t i = 0; i < w.nodes.size(); ++i) neighbors[prior_[w.nodes[i]]] += w.weights[i];
  SoftLabel out(classes_, 0.0);
  const double a = config_.alpha;
  for (std::size_t c = 0; c < classes_; ++c) out[c] = (1.0 - a) * neighbors[c];
  out[prior_[node]] += a;
  return out;
}

SoftLabel graph_smoothed_label(const Example& x, const EmbeddingGraph& graph) {
  if (!is_pseudo(x.provenance) && x.label.kind != LabelKind::Pseudo)
    throw Error("invalid_argument", "smoothed labels are defined for pseudo examples only");
  auto node = graph.find(x.id);
  if (!node) throw Error("not_in_graph", "example '" + x.id + "' is not a graph node");
  return graph.smoothed_label(*node);
}

std::map<std::string, SoftLabel> smooth_all(const EmbeddingGraph& graph, const std::vector<Example>& pseudo) {
  std::map<std::string, SoftLabel> out;
  for (const auto& x : pseudo) out.emplace(x.id, graph_smoothed_label(x, graph));
  return out;
}

}  // namespace softood
