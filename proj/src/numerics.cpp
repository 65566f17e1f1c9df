#include "softood/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "softood/error.hpp"

namespace softood {

namespace {

constexpr double kLogClamp = 1e-12;

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": size mismatch (" << a << " vs " << b << ")";
    throw Error("dimension_mismatch", os.str());
  }
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector matvec(const Matrix& m, std::span<const double> x) {
  require_same_size(m.cols(), x.size(), "matvec");
  Vector y(m.rows(), 0.0);
  const auto w = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = w.data() + r * m.cols();
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> y) {
  require_same_size(m.rows(), y.size(), "matvec_transposed");
  Vector x(m.cols(), 0.0);
  const auto w = m.values();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = w.data() + r * m.cols();
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) x[c] += row[c] * yr;
  }
  return x;
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error("non_finite", std::string(what) + ": non-finite value");
  }
}

Vector softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("invalid_argument", "softmax: temperature must be positive");
  if (logits.empty()) throw Error("invalid_argument", "softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double cross_entropy(std::span<const double> target, std::span<const double> pred) {
  require_same_size(target.size(), pred.size(), "cross_entropy");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    s -= target[i] * std::log(std::max(pred[i], kLogClamp));
  }
  return s;
}

double entropy(std::span<const double> p) { return cross_entropy(p, p); }

Vector l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > 1e-12)) throw Error("degenerate_embedding", "l2_normalize: near-zero norm");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vector one_hot(std::size_t size, std::size_t hot) {
  if (hot >= size) throw Error("invalid_argument", "one_hot: index out of range");
  Vector v(size, 0.0);
  v[hot] = 1.0;
  return v;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ParamBlock& ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  ParamBlock b;
  b.name = std::move(name);
  b.value = Matrix(rows, cols);
  b.grad = Matrix(rows, cols);
  b.first_moment = Matrix(rows, cols);
  b.second_moment = Matrix(rows, cols);
  blocks.push_back(std::move(b));
  return blocks.back();
}

ParamBlock& ParamStore::block(const std::string& name) {
  for (auto& b : blocks)
    if (b.name == name) return b;
  throw Error("unknown_parameter", "no parameter block named " + name);
}

const ParamBlock& ParamStore::block(const std::string& name) const {
  return const_cast<ParamStore*>(this)->block(name);
}

void ParamStore::zero_grad() {
  for (auto& b : blocks) {
    b.grad.fill(0.0);
    b.has_grad = false;
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.value.size();
  return n;
}

double MlpSpec::dropout_rate(std::size_t layer) const {
  return dropout.empty() ? 0.0 : dropout.at(layer);
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw Error("invalid_config", "MlpSpec: at least one layer required");
  for (auto w : widths)
    if (w == 0) throw Error("invalid_config", "MlpSpec: widths must be positive");
  if (!dropout.empty() && dropout.size() != layer_count())
    throw Error("invalid_config", "MlpSpec: one dropout rate per layer required");
  for (double r : dropout)
    if (!(r >= 0.0 && r < 1.0)) throw Error("invalid_config", "MlpSpec: dropout rate outside [0,1)");
  if (!(negative_slope >= 0.0)) throw Error("invalid_config", "MlpSpec: negative slope must be >= 0");
}

Mlp::Mlp(MlpSpec spec, std::string name, std::uint64_t init_seed)
    : spec_(std::move(spec)), name_(std::move(name)) {
  spec_.validate();
  std::mt19937_64 rng(init_seed);
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const std::size_t in = spec_.widths[l];
    const std::size_t out = spec_.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    auto& w = params_.add(name_ + ".w" + std::to_string(l), out, in);
    for (double& x : w.value.values()) x = (2.0 * unit_uniform(rng) - 1.0) * bound;
    auto& b = params_.add(name_ + ".b" + std::to_string(l), out, 1);
    for (double& x : b.value.values()) x = (2.0 * unit_uniform(rng) - 1.0) * bound;
  }
}

Vector dropout_mask(std::size_t width, double rate, std::uint64_t seed) {
  Vector mask(width, 1.0);
  if (rate <= 0.0) return mask;
  std::mt19937_64 rng(seed);
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = unit_uniform(rng) < rate ? 0.0 : keep;
  return mask;
}

Vector Mlp::forward(std::span<const double> input, DropoutSeed dropout, MlpCache* cache) const {
  if (input.size() != spec_.input_width())
    throw Error("dimension_mismatch", name_ + ": input width " + std::to_string(input.size()) +
                                          ", expected " + std::to_string(spec_.input_width()));
  require_finite(input, "mlp input");
  if (cache) *cache = MlpCache{};

  Vector x(input.begin(), input.end());
  const std::size_t layers = spec_.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const double rate = spec_.dropout_rate(l);
    if (dropout && rate > 0.0) {
      Vector mask = dropout_mask(x.size(), rate, mix_seed(*dropout, l));
      for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
      if (cache) cache->keep_scale.push_back(std::move(mask));
    } else if (cache) {
      cache->keep_scale.emplace_back();
    }
    Vector pre = matvec(weight(l), x);
    const auto b = bias(l).values();
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += b[i];

    const bool activate = l + 1 < layers || spec_.activate_output;
    Vector out = pre;
    if (activate) {
      for (double& v : out)
        if (v < 0.0) v *= spec_.negative_slope;
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preactivations.push_back(std::move(pre));
    }
    x = std::move(out);
  }
  return x;
}

Vector Mlp::backward(const MlpCache& cache, std::span<const double> grad_output) {
  const std::size_t layers = spec_.layer_count();
  if (cache.inputs.size() != layers) throw Error("invalid_argument", name_ + ": backward without cache");
  if (grad_output.size() != spec_.output_width())
    throw Error("dimension_mismatch", name_ + ": gradient width mismatch");

  Vector g(grad_output.begin(), grad_output.end());
  for (std::size_t l = layers; l-- > 0;) {
    const bool activate = l + 1 < layers || spec_.activate_output;
    if (activate) {
      const auto& pre = cache.preactivations[l];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (pre[i] < 0.0) g[i] *= spec_.negative_slope;
    }
    auto& wb = params_.blocks[2 * l];
    auto& bb = params_.blocks[2 * l + 1];
    const auto& in = cache.inputs[l];
    auto gw = wb.grad.values();
    auto gb = bb.grad.values();
    const std::size_t cols = in.size();
    for (std::size_t r = 0; r < g.size(); ++r) {
      const double gr = g[r];
      gb[r] += gr;
      if (gr == 0.0) continue;
      double* row = gw.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) row[c] += gr * in[c];
    }
    wb.has_grad = true;
    bb.has_grad = true;

    Vector gin = matvec_transposed(wb.value, g);
    const auto& mask = cache.keep_scale[l];
    if (!mask.empty())
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= mask[i];
    g = std::move(gin);
  }
  return g;
}

void optimizer_step(ParamStore& params, const OptimizerConfig& config) {
  if (!(config.lr > 0.0)) throw Error("invalid_argument", "optimizer_step: lr must be positive");
  for (const auto& b : params.blocks)
    if (!b.has_grad) throw Error("missing_gradient", "optimizer_step: no gradient for " + b.name);

  params.step += 1;
  const double t = static_cast<double>(params.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const bool decoupled = config.mode == OptimizerMode::AdamW && config.weight_decay > 0.0;

  for (auto& b : params.blocks) {
    auto p = b.value.values();
    auto g = b.grad.values();
    auto m = b.first_moment.values();
    auto v = b.second_moment.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (decoupled) p[i] -= config.lr * config.weight_decay * p[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  params.zero_grad();
}

double finite_diff_check(std::span<ParamStore* const> stores, const std::function<double()>& loss,
                         double h) {
  double worst = 0.0;
  for (ParamStore* store : stores) {
    for (auto& b : store->blocks) {
      auto p = b.value.values();
      auto g = b.grad.values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double up = loss();
        p[i] = saved - h;
        const double down = loss();
        p[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

}  // namespace softood
