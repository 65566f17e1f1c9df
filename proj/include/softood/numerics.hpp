#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace softood {

using Vector = std::vector<double>;

// Probability vector over the k IND intents plus the OOD class (index k).
using SoftLabel = std::vector<double>;

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Vector helpers. All of them check shapes and throw on mismatch.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
Vector matvec(const Matrix& m, std::span<const double> x);
Vector matvec_transposed(const Matrix& m, std::span<const double> y);
void require_finite(std::span<const double> v, const char* what);

Vector softmax(std::span<const double> logits, double temperature = 1.0);

// -sum target * log(max(pred, 1e-12))
double cross_entropy(std::span<const double> target, std::span<const double> pred);
double entropy(std::span<const double> p);

/// Throws Error("degenerate_embedding") when the norm is at most 1e-12.
Vector l2_normalize(std::span<const double> v);

Vector one_hot(std::size_t size, std::size_t hot);

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct ParamBlock {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  bool has_grad = false;
};

/// Trainable parameters of one network together with their gradient and
/// optimizer state.
struct ParamStore {
  std::vector<ParamBlock> blocks;
  std::uint64_t step = 0;

  ParamBlock& add(std::string name, std::size_t rows, std::size_t cols);
  ParamBlock& block(const std::string& name);
  const ParamBlock& block(const std::string& name) const;
  void zero_grad();
  std::size_t parameter_count() const;
};

struct MlpSpec {
  // input -> hidden... -> output; at least two entries.
  std::vector<std::size_t> widths;
  double negative_slope = 0.01;
  // Dropout rate applied to the input of each linear layer; empty means none.
  std::vector<double> dropout;
  // Apply the leaky rectifier after the last layer as well.
  bool activate_output = false;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  double dropout_rate(std::size_t layer) const;
  void validate() const;
};

/// Seed for the dropout masks of one forward pass; nullopt disables dropout.
using DropoutSeed = std::optional<std::uint64_t>;

struct MlpCache {
  std::vector<Vector> inputs;       // input of each layer after dropout
  std::vector<Vector> keep_scale;   // 0 or 1/(1-rate) per unit; empty if no dropout
  std::vector<Vector> preactivations;
};

/// Multilayer perceptron with leaky-rectifier activations and inverted dropout.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::string name, std::uint64_t init_seed);

  const MlpSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Matrix& weight(std::size_t layer) { return params_.blocks[2 * layer].value; }
  const Matrix& weight(std::size_t layer) const { return params_.blocks[2 * layer].value; }
  Matrix& bias(std::size_t layer) { return params_.blocks[2 * layer + 1].value; }
  const Matrix& bias(std::size_t layer) const { return params_.blocks[2 * layer + 1].value; }

  Vector forward(std::span<const double> input, DropoutSeed dropout = std::nullopt,
                 MlpCache* cache = nullptr) const;

  /// Accumulates parameter gradients for dL/d(output) and returns dL/d(input).
  Vector backward(const MlpCache& cache, std::span<const double> grad_output);

 private:
  MlpSpec spec_;
  std::string name_;
  ParamStore params_;
};

/// Dropout keep mask for a layer of `width` units: entries are 0 or 1/(1-rate).
Vector dropout_mask(std::size_t width, double rate, std::uint64_t seed);

enum class OptimizerMode { Adam, AdamW };

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::Adam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; only used by AdamW
};

/// Bias-corrected adaptive-moment update. Requires every block to carry a
/// gradient; zeroes gradients afterwards.
void optimizer_step(ParamStore& params, const OptimizerConfig& config);

/// Max over parameters of |analytic - numeric| / max(1, |numeric|), where
/// analytic gradients are read from the stores' grad buffers and numeric ones
/// come from central differences of `loss`.
double finite_diff_check(std::span<ParamStore* const> stores,
                         const std::function<double()>& loss, double h = 1e-4);

}  // namespace softood
