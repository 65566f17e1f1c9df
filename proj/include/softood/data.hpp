#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "softood/numerics.hpp"

namespace softood {

enum class LabelKind { Intent, Ood, Pseudo };

/// IND intent index, the OOD class, or "unlabeled pseudo-OOD".
struct Label {
  LabelKind kind = LabelKind::Pseudo;
  std::size_t intent = 0;

  static Label of_intent(std::size_t i) { return {LabelKind::Intent, i}; }
  static Label ood() { return {LabelKind::Ood, 0}; }
  static Label pseudo() { return {LabelKind::Pseudo, 0}; }

  bool is_intent() const { return kind == LabelKind::Intent; }
  bool operator==(const Label&) const = default;
};

enum class Provenance { Ind, PseudoFm, PseudoOs, PseudoLg, PseudoPd, Test };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);
bool is_pseudo(Provenance p);

struct Example {
  std::string id;
  Vector features;
  Label label;
  Provenance provenance = Provenance::Ind;
  std::optional<std::string> text;
};

/// k IND intent names; the OOD class is always index k.
class IntentSpace {
 public:
  IntentSpace() = default;
  explicit IntentSpace(std::vector<std::string> ind_names);

  std::size_t k() const { return names_.size(); }
  std::size_t ood_index() const { return names_.size(); }
  std::size_t class_count() const { return names_.size() + 1; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> index_of(const std::string& name) const;

  /// Class index in 0..k for an IND or OOD label; throws for pseudo labels.
  std::size_t class_of(const Label& label) const;

  bool operator==(const IntentSpace&) const = default;

 private:
  std::vector<std::string> names_;
};

// Label string used in files for the single OOD class.
inline constexpr const char* kOodLabelName = "__ood__";

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::size_t feature_dim = 0;
  std::vector<std::string> classes;
  SplitCounts counts;
  std::optional<std::uint64_t> seed;
  int format_version = 1;

  bool operator==(const DatasetManifest&) const = default;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct Dataset {
  DatasetManifest manifest;
  IntentSpace intents;
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
  // Validation examples of non-IND intents, relabeled OOD. Only the MSP
  // baseline reads them (to pick its threshold); stored as valid_ood.jsonl.
  std::vector<Example> valid_ood;
};

struct LoadOptions {
  // When set, the number of examples must match.
  std::optional<std::size_t> expected_count;
  // Overwrite labels of pseudo-provenance lines instead of rejecting them.
  bool relabel_pseudo = false;
  std::size_t* relabeled = nullptr;
};

/// Reads one JSON-Lines file, validating every line against the manifest's
/// feature dimension and class list. Errors name the offending line.
std::vector<Example> load_examples(const std::filesystem::path& path, const DatasetManifest& manifest,
                                   const IntentSpace& intents, const LoadOptions& options = {});

void write_examples(const std::vector<Example>& examples, const IntentSpace& intents,
                    const std::filesystem::path& path);

/// Loads manifest.json plus train/valid/test.jsonl from a directory.
Dataset load_dataset(const std::filesystem::path& dir);
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct SplitSpec {
  double ind_ratio = 0.25;
  std::uint64_t seed = 0;
};

std::size_t ind_intent_count(std::size_t total, double ratio);

/// Selects round(ratio * K) intents as IND. Train and valid keep only IND
/// examples; test keeps everything with the other intents relabeled OOD.
Dataset make_ind_split(const Dataset& full, const SplitSpec& spec,
                       std::vector<std::string>* selected_names = nullptr);

struct SynthConfig {
  std::size_t n_intents = 8;
  std::size_t dim = 16;
  std::size_t n_per_intent = 100;
  double center_scale = 10.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

/// Gaussian intent clusters with centers uniform on a sphere, split 70/10/20
/// per intent.
Dataset synth_clusters(const SynthConfig& config);

}  // namespace softood
