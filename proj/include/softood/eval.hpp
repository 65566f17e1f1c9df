#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softood/cotrain.hpp"
#include "softood/data.hpp"
#include "softood/detector.hpp"
#include "softood/oodgen.hpp"

namespace softood {

/// (k+1) x (k+1) counts; rows are gold classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return n_; }
  std::size_t k() const { return n_ - 1; }
  std::uint64_t& at(std::size_t gold, std::size_t pred) { return counts_[gold * n_ + pred]; }
  std::uint64_t at(std::size_t gold, std::size_t pred) const { return counts_[gold * n_ + pred]; }
  std::uint64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> golds, std::span<const std::size_t> preds, std::size_t k);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  double acc_all = 0.0;
  double f1_all = 0.0;   // macro over k+1 classes
  double f1_ind = 0.0;   // macro over the k IND classes
  double f1_ood = 0.0;   // F1 of class k
  double micro_f1_all = 0.0;
  std::vector<ClassScores> per_class;
};

/// A class with no gold and no predicted examples scores F1 = 0.
MetricReport metrics(const ConfusionMatrix& m);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Two-sided Welch test; paired=true runs a paired t-test on a - b instead.
TTestResult t_test(std::span<const double> a, std::span<const double> b, bool paired = false);

struct ExperimentConfig {
  std::string name = "experiment";
  // Either a dataset directory or synthetic clusters (regenerated per seed).
  std::optional<std::filesystem::path> dataset_dir;
  SynthConfig synth;
  double ind_ratio = 0.5;
  PseudoOodConfig ood;
  ModelConfig model;
  TrainConfig train;
  BoundaryFitConfig boundary;
  bool adb_ind_only = false;
  std::size_t n_seeds = 10;
  std::uint64_t base_seed = 1;
  bool run_msp = false;
  std::size_t msp_valid_ood = 100;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport report;
  std::optional<MetricReport> msp;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

struct ExperimentReport {
  std::string name;
  std::string config_hash;
  std::vector<SeedResult> seeds;
  MetricReport mean;
  std::optional<MetricReport> msp_mean;

  std::vector<double> column(const std::function<double(const MetricReport&)>& metric) const;
  std::size_t succeeded() const;
};

/// Everything produced for one seed, for callers that need the model.
struct SeedArtifacts {
  Dataset split;
  std::vector<Example> pseudo;
  TrainResult trained;
  Boundaries boundaries;
  std::vector<Prediction> predictions;
  MetricReport report;
};

SeedArtifacts run_single_seed(const ExperimentConfig& config, std::uint64_t seed);

/// The training half of run_single_seed on an already split dataset and
/// pseudo-OOD set: train, fit boundaries, detect and score the test set.
SeedArtifacts run_on_split(Dataset split, std::vector<Example> pseudo, const ExperimentConfig& config,
                           std::uint64_t seed);

/// split -> pseudo-OOD -> train -> boundaries -> detect -> metrics for each
/// seed. Failing seeds are recorded; at least one must succeed.
ExperimentReport run_experiment(const ExperimentConfig& config, std::size_t jobs = 1);

/// Mean of per-seed reports (per-class scores averaged elementwise).
MetricReport mean_report(std::span<const MetricReport> reports);

struct SweepAxis {
  std::string param;  // tau | dropout | alpha | beta
  std::vector<double> values;
};

struct SweepRow {
  std::map<std::string, double> point;
  ExperimentReport report;
};

void apply_sweep_param(ExperimentConfig& config, const std::string& param, double value);

/// Cartesian product over the axes (first axis varies slowest), shared seeds.
std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& grid, std::size_t jobs = 1);

// Report serialization.
std::string report_csv(const ExperimentReport& report);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string version_string();

}  // namespace softood
