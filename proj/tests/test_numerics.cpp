#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "softood/numerics.hpp"
#include "support.hpp"

using namespace softood;
using testing::error_kind;

namespace {

Mlp identity_layer(std::size_t n, double slope, bool activate) {
  MlpSpec spec{{n, n}, slope, {}, activate};
  Mlp m(spec, "id", 1);
  m.weight(0).fill(0.0);
  for (std::size_t i = 0; i < n; ++i) m.weight(0)(i, i) = 1.0;
  m.bias(0).fill(0.0);
  return m;
}

}  // namespace

TEST_CASE("softmax examples") {
  const Vector a = softmax(Vector{0.0, 0.0});
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));

  const Vector b = softmax(Vector{1.0, 0.0});
  const double e = std::numbers::e;
  CHECK(std::abs(b[0] - e / (e + 1.0)) < 1e-15);
  CHECK(std::abs(b[1] - 1.0 / (e + 1.0)) < 1e-15);
  CHECK(b[0] == doctest::Approx(0.7311).epsilon(1e-4));

  const Vector c = softmax(Vector{1000.0, 0.0});
  CHECK(c[0] == 1.0);
  CHECK(c[1] >= 0.0);
  CHECK(std::isfinite(c[1]));

  CHECK(error_kind([] { softmax(Vector{1.0}, 0.0); }) == "invalid_argument");
  CHECK(error_kind([] { softmax(Vector{1.0}, -1.0); }) == "invalid_argument");
}

TEST_CASE("softmax sums to one, preserves order and is shift invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector logits = testing::random_vector(rng, 1 + rng.index(12), 20.0);
    const double t = rng.uniform(0.05, 5.0);
    const Vector p = softmax(logits, t);
    CHECK(std::abs(testing::sum(p) - 1.0) < 1e-12);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < p.size(); ++j)
        if (logits[i] > logits[j]) CHECK(p[i] >= p[j]);
    Vector shifted = logits;
    for (double& x : shifted) x += 123.0;
    const Vector q = softmax(shifted, t);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
  }
}

TEST_CASE("cross entropy examples and properties") {
  CHECK(cross_entropy(Vector{1, 0}, Vector{1, 0}) == 0.0);
  CHECK(cross_entropy(Vector{1, 0}, Vector{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(Vector{0.5, 0.5}, Vector{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(cross_entropy(Vector{1, 0}, Vector{0, 1})));
  CHECK(cross_entropy(Vector{1, 0}, Vector{0, 1}) == doctest::Approx(-std::log(1e-12)));
  CHECK(error_kind([] { cross_entropy(Vector{1, 0}, Vector{1, 0, 0}); }) == "dimension_mismatch");

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(8);
    const Vector p = softmax(testing::random_vector(rng, n));
    const Vector q = softmax(testing::random_vector(rng, n));
    CHECK(std::abs(cross_entropy(p, p) - entropy(p)) < 1e-9);
    CHECK(cross_entropy(p, q) >= entropy(p) - 1e-12);
  }
}

TEST_CASE("l2 normalize") {
  const Vector v = l2_normalize(Vector{3, 4});
  CHECK(v[0] == doctest::Approx(0.6));
  CHECK(v[1] == doctest::Approx(0.8));
  const Vector u = l2_normalize(Vector{0, 1});
  CHECK(u == Vector{0, 1});
  CHECK(error_kind([] { l2_normalize(Vector{0, 0}); }) == "degenerate_embedding");
  Rng rng(9);
  for (int i = 0; i < 50; ++i) CHECK(std::abs(norm2(l2_normalize(testing::random_vector(rng, 7))) - 1.0) < 1e-9);
}

TEST_CASE("vector helpers reject shape mismatches") {
  CHECK(error_kind([] { dot(Vector{1, 2}, Vector{1}); }) == "dimension_mismatch");
  Matrix m(2, 3);
  CHECK(error_kind([&] { matvec(m, Vector{1, 2}); }) == "dimension_mismatch");
  CHECK(error_kind([&] { matvec_transposed(m, Vector{1, 2, 3}); }) == "dimension_mismatch");
  CHECK(error_kind([] { one_hot(2, 2); }) == "invalid_argument");
  CHECK(error_kind([] { require_finite(Vector{1.0, NAN}, "x"); }) == "non_finite");
}

TEST_CASE("leaky rectifier on an identity layer") {
  const Mlp m = identity_layer(2, 0.01, true);
  const Vector out = m.forward(Vector{2, -2});
  CHECK(out[0] == doctest::Approx(2.0));
  CHECK(out[1] == doctest::Approx(-0.02));

  const Mlp linear = identity_layer(2, 0.01, false);
  CHECK(linear.forward(Vector{2, -2}) == Vector{2, -2});
}

TEST_CASE("mlp forward validates input") {
  const Mlp m(MlpSpec{{3, 4, 2}}, "m", 1);
  CHECK(m.forward(Vector{1, 2, 3}).size() == 2);
  CHECK(error_kind([&] { m.forward(Vector{1, 2}); }) == "dimension_mismatch");
  CHECK(error_kind([&] { m.forward(Vector{1, NAN, 3}); }) == "non_finite");
  CHECK(error_kind([] { Mlp(MlpSpec{{3}}, "bad", 1); }) == "invalid_config");
  CHECK(error_kind([] { Mlp(MlpSpec{{3, 0, 2}}, "bad", 1); }) == "invalid_config");
  CHECK(error_kind([] { Mlp(MlpSpec{{3, 2}, 0.01, {1.0}}, "bad", 1); }) == "invalid_config");
}

TEST_CASE("dropout masks") {
  SUBCASE("rate zero is the identity") {
    const Mlp m(MlpSpec{{4, 5, 3}, 0.01, {0.0, 0.0}}, "m", 2);
    const Vector x{0.1, -0.4, 0.7, 1.1};
    CHECK(m.forward(x, 1) == m.forward(x));
    CHECK(m.forward(x, 99) == m.forward(x));
  }
  SUBCASE("fixed seed repeats, entries are 0 or 1/(1-rate)") {
    const Vector a = dropout_mask(4, 0.5, 7);
    CHECK(a == dropout_mask(4, 0.5, 7));
    for (double v : a) CHECK((v == 0.0 || v == 2.0));
  }
  SUBCASE("differing seeds give differing 4-unit patterns at the Bernoulli rate") {
    // Two independent Bernoulli(0.5) patterns over 4 units coincide with
    // probability 2^-4.
    const int trials = 1000;
    int differ = 0;
    for (int t = 0; t < trials; ++t)
      if (dropout_mask(4, 0.5, 2 * t) != dropout_mask(4, 0.5, 2 * t + 1)) ++differ;
    const double p = 1.0 - std::pow(2.0, -4.0);
    const double se = std::sqrt(p * (1 - p) / trials);
    CHECK(std::abs(differ / double(trials) - p) < 4 * se);
  }
  SUBCASE("expected output equals the dropout-off output") {
    const Mlp m(MlpSpec{{3, 1}, 0.01, {0.6}}, "m", 4);
    const Vector x{0.3, -1.2, 0.8};
    const double off = m.forward(x)[0];
    const int n = 10000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = m.forward(x, static_cast<std::uint64_t>(i))[0];
      s += y;
      s2 += y * y;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - off) < 3 * se);
  }
}

TEST_CASE("adaptive-moment steps") {
  SUBCASE("first step moves by about lr") {
    ParamStore s;
    s.add("p", 1, 1);
    s.blocks[0].grad(0, 0) = 1.0;
    s.blocks[0].has_grad = true;
    optimizer_step(s, {OptimizerMode::Adam, 0.1});
    CHECK(s.blocks[0].value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(s.step == 1);
    CHECK(s.blocks[0].grad(0, 0) == 0.0);
    CHECK_FALSE(s.blocks[0].has_grad);
  }
  SUBCASE("decoupled decay with zero gradient") {
    ParamStore s;
    s.add("p", 1, 1).value(0, 0) = 1.0;
    s.blocks[0].has_grad = true;
    optimizer_step(s, {OptimizerMode::AdamW, 0.1, 0.9, 0.999, 1e-8, 0.01});
    CHECK(s.blocks[0].value(0, 0) == doctest::Approx(0.999).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore s;
    s.add("p", 2, 2).value.fill(0.5);
    s.blocks[0].has_grad = true;
    optimizer_step(s, {OptimizerMode::Adam, 0.1});
    for (double v : s.blocks[0].value.values()) CHECK(v == 0.5);
  }
  SUBCASE("missing gradient and bad lr") {
    ParamStore s;
    s.add("p", 1, 1);
    CHECK(error_kind([&] { optimizer_step(s, {}); }) == "missing_gradient");
    s.blocks[0].has_grad = true;
    CHECK(error_kind([&] { optimizer_step(s, {OptimizerMode::Adam, 0.0}); }) == "invalid_argument");
  }
}

TEST_CASE("finite difference oracle on a quadratic") {
  ParamStore s;
  s.add("x", 1, 1).value(0, 0) = 3.0;
  s.blocks[0].grad(0, 0) = 3.0;
  ParamStore* stores[] = {&s};
  const double err = finite_diff_check(stores, [&] {
    const double x = s.blocks[0].value(0, 0);
    return 0.5 * x * x;
  });
  CHECK(err <= 1e-8);
}

TEST_CASE("mlp backward matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 2 + rng.index(4), hidden = 2 + rng.index(5), out = 1 + rng.index(3);
    Mlp m(MlpSpec{{in, hidden, out}, rng.uniform(0.0, 0.3), {}, trial % 2 == 0}, "m", rng.next());
    const Vector x = testing::random_vector(rng, in);
    const Vector w = testing::random_vector(rng, out);
    auto loss = [&] {
      const Vector y = m.forward(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i] + 0.5 * y[i] * y[i];
      return s;
    };
    MlpCache cache;
    const Vector y = m.forward(x, std::nullopt, &cache);
    Vector g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = w[i] + y[i];
    m.params().zero_grad();
    const Vector gin = m.backward(cache, g);
    ParamStore* stores[] = {&m.params()};
    CHECK(finite_diff_check(stores, loss) <= 1e-6);

    // input gradient
    for (std::size_t i = 0; i < in; ++i) {
      const double h = 1e-5;
      Vector a = x, b = x;
      a[i] += h;
      b[i] -= h;
      auto eval = [&](const Vector& v) {
        const Vector yy = m.forward(v);
        double s = 0.0;
        for (std::size_t j = 0; j < yy.size(); ++j) s += w[j] * yy[j] + 0.5 * yy[j] * yy[j];
        return s;
      };
      const double num = (eval(a) - eval(b)) / (2 * h);
      CHECK(std::abs(gin[i] - num) / std::max(1.0, std::abs(num)) <= 1e-6);
    }
  }
}

TEST_CASE("initialization and forward are deterministic") {
  const Mlp a(MlpSpec{{5, 6, 3}}, "m", 42);
  const Mlp b(MlpSpec{{5, 6, 3}}, "m", 42);
  const Mlp c(MlpSpec{{5, 6, 3}}, "m", 43);
  CHECK(a.params().blocks[0].value == b.params().blocks[0].value);
  CHECK_FALSE(a.params().blocks[0].value == c.params().blocks[0].value);
  const Vector x{1, 2, 3, 4, 5};
  CHECK(a.forward(x, 5) == b.forward(x, 5));
  CHECK(a.params().parameter_count() == 5 * 6 + 6 + 6 * 3 + 3);
  CHECK(a.params().block("m.w1").value.rows() == 3);
  CHECK(error_kind([&] { a.params().block("nope"); }) == "unknown_parameter");
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}

TEST_CASE("portable rng") {
  Rng a(1), b(1);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng r(2);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[r.index(5)];
  for (int c : counts) CHECK(std::abs(c - 1000) < 150);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / 20000) < 0.05);
  CHECK(std::abs(s2 / 20000 - 1.0) < 0.05);
  std::vector<int> v{0, 1, 2, 3, 4, 5};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
}
