#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "softood/eval.hpp"
#include "support.hpp"

using namespace softood;
using testing::error_kind;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix m(rows.size());
  for (std::size_t g = 0; g < rows.size(); ++g)
    for (std::size_t p = 0; p < rows.size(); ++p) m.at(g, p) = rows[g][p];
  return m;
}

ConfusionMatrix random_matrix(Rng& rng, std::size_t classes) {
  ConfusionMatrix m(classes);
  for (std::size_t g = 0; g < classes; ++g)
    for (std::size_t p = 0; p < classes; ++p) m.at(g, p) = rng.index(3) == 0 ? 0 : rng.index(20);
  m.at(0, 0) += 1;
  return m;
}

// Two-sided tail probability of Student's t by Simpson integration of the density.
double t_two_sided(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double a = 0.0, b = std::abs(t), h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  return 1.0 - 2.0 * s * h / 3.0;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.synth.n_intents = 4;
  c.synth.dim = 6;
  c.synth.n_per_intent = 30;
  c.model.encoder_hidden = c.model.feature_dim = c.model.proj_hidden = c.model.head_hidden = 12;
  c.model.proj_dim = 6;
  c.train.max_epochs = 3;
  c.train.batch_ind = c.train.batch_ood = 16;
  c.train.lr_encoder = c.train.lr_heads = 1e-3;
  c.n_seeds = 2;
  return c;
}

}  // namespace

TEST_CASE("confusion matrix") {
  const std::vector<std::size_t> gold{0, 0, 1}, pred{0, 1, 1};
  const auto m = confusion(gold, pred, 1);
  CHECK(m == from_rows({{1, 1}, {0, 1}}));
  CHECK(m.total() == 3);
  const auto d = confusion(gold, gold, 1);
  CHECK(d.at(0, 1) == 0);
  CHECK(d.at(1, 0) == 0);
  CHECK(error_kind([] { confusion({}, {}, 1); }) == "invalid_argument");
  const std::vector<std::size_t> short_pred{0, 1};
  CHECK(error_kind([&] { confusion(gold, short_pred, 1); }) == "dimension_mismatch");
  const std::vector<std::size_t> bad{0, 0, 2};
  CHECK(error_kind([&] { confusion(gold, bad, 1); }) == "invalid_label");
}

TEST_CASE("metrics: worked examples") {
  SUBCASE("diagonal") {
    const auto r = metrics(from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}));
    CHECK(r.acc_all == 1.0);
    CHECK(r.f1_all == 1.0);
    CHECK(r.f1_ind == 1.0);
    CHECK(r.f1_ood == 1.0);
  }
  SUBCASE("k = 1 matrix [[8,2],[3,7]]") {
    const auto r = metrics(from_rows({{8, 2}, {3, 7}}));
    CHECK(r.acc_all == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.per_class[0].precision == doctest::Approx(8.0 / 11).epsilon(1e-12));
    CHECK(r.per_class[0].recall == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(r.per_class[1].precision == doctest::Approx(7.0 / 9).epsilon(1e-12));
    CHECK(r.per_class[1].recall == doctest::Approx(0.7).epsilon(1e-12));
    // F1 = 2TP / (2TP + FP + FN)
    CHECK(r.f1_ind == doctest::Approx(16.0 / 21).epsilon(1e-12));
    CHECK(r.f1_ood == doctest::Approx(14.0 / 19).epsilon(1e-12));
    CHECK(std::round(r.f1_all * 1e4) / 1e4 == 0.7494);
    CHECK(std::round(r.f1_ind * 1e4) / 1e4 == 0.7619);
    CHECK(std::round(r.f1_ood * 1e4) / 1e4 == 0.7368);
  }
  SUBCASE("absent class scores zero") {
    const auto r = metrics(from_rows({{4, 0, 0}, {0, 0, 0}, {1, 0, 3}}));
    CHECK(r.per_class[1].f1 == 0.0);
    CHECK(r.f1_all == doctest::Approx((r.per_class[0].f1 + r.per_class[2].f1) / 3).epsilon(1e-12));
  }
}

TEST_CASE("metric identities on random matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 2 + rng.index(8);
    const auto m = random_matrix(rng, classes);
    const auto r = metrics(m);
    const double k = static_cast<double>(classes - 1);
    CHECK(std::abs(r.f1_all - (k * r.f1_ind + r.f1_ood) / (k + 1)) <= 1e-12);
    CHECK(std::abs(r.micro_f1_all - r.acc_all) <= 1e-12);
    for (double v : {r.acc_all, r.f1_all, r.f1_ind, r.f1_ood}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("metrics ignore the order of the examples") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(4);
    std::vector<std::size_t> gold, pred;
    for (int i = 0; i < 60; ++i) {
      gold.push_back(rng.index(k + 1));
      pred.push_back(rng.index(k + 1));
    }
    std::vector<std::size_t> perm(gold.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<std::size_t> g2, p2;
    for (auto i : perm) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
    }
    const auto a = metrics(confusion(gold, pred, k)), b = metrics(confusion(g2, p2, k));
    CHECK(a.f1_all == b.f1_all);
    CHECK(a.acc_all == b.acc_all);
  }
}

TEST_CASE("t-test") {
  const std::vector<double> a{0.80, 0.82, 0.79, 0.85, 0.81};
  SUBCASE("identical samples") {
    CHECK(t_test(a, a).p_value == doctest::Approx(1.0));
    CHECK(t_test(a, a, true).p_value == doctest::Approx(1.0));
  }
  SUBCASE("Welch statistic against a direct evaluation") {
    const std::vector<double> b{0.75, 0.78, 0.74, 0.80, 0.73, 0.77};
    auto mean = [](const std::vector<double>& v) { return testing::sum(v) / v.size(); };
    auto var = [&](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += (x - mean(v)) * (x - mean(v));
      return s / (v.size() - 1);
    };
    const double sa = var(a) / a.size(), sb = var(b) / b.size();
    const double t = (mean(a) - mean(b)) / std::sqrt(sa + sb);
    const double df = (sa + sb) * (sa + sb) / (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1));
    const auto r = t_test(a, b);
    CHECK(r.t == doctest::Approx(t).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(df).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(t_two_sided(t, df)).epsilon(1e-7));
    CHECK(r.p_value < 0.05);
    CHECK(t_test(b, a).p_value == doctest::Approx(r.p_value).epsilon(1e-12));
  }
  SUBCASE("paired statistic") {
    const std::vector<double> b{0.78, 0.81, 0.76, 0.80, 0.80};
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
    const double md = testing::sum(d) / d.size();
    double s = 0;
    for (double x : d) s += (x - md) * (x - md);
    const double t = md / std::sqrt(s / (d.size() - 1) / d.size());
    const auto r = t_test(a, b, true);
    CHECK(r.t == doctest::Approx(t).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(4.0));
    CHECK(r.p_value == doctest::Approx(t_two_sided(t, 4.0)).epsilon(1e-7));
    const std::vector<double> shorter{0.1, 0.2};
    CHECK(error_kind([&] { t_test(a, shorter, true); }) == "dimension_mismatch");
  }
  SUBCASE("empty samples") {
    CHECK(error_kind([&] { t_test({}, a); }) == "invalid_argument");
  }
}

TEST_CASE("experiments") {
  SUBCASE("one seed: the mean is the run") {
    auto c = tiny_experiment();
    c.n_seeds = 1;
    const auto r = run_experiment(c);
    REQUIRE(r.seeds.size() == 1);
    REQUIRE(r.seeds[0].ok);
    CHECK(r.mean.f1_all == r.seeds[0].report.f1_all);
    CHECK(r.mean.acc_all == r.seeds[0].report.acc_all);
    const auto single = run_single_seed(c, r.seeds[0].seed);
    CHECK(single.report.f1_all == r.seeds[0].report.f1_all);
  }
  SUBCASE("means are means of the seeds; jobs do not change results") {
    auto c = tiny_experiment();
    c.n_seeds = 3;
    const auto r = run_experiment(c);
    const auto col = r.column([](const MetricReport& m) { return m.f1_ood; });
    CHECK(std::abs(r.mean.f1_ood - testing::sum(col) / col.size()) <= 1e-12);
    const auto parallel = run_experiment(c, 3);
    for (std::size_t i = 0; i < r.seeds.size(); ++i)
      CHECK(parallel.seeds[i].report.f1_all == r.seeds[i].report.f1_all);
    CHECK(t_test(col, col).p_value == doctest::Approx(1.0));
  }
  SUBCASE("a failing configuration is reported") {
    auto c = tiny_experiment();
    c.ood.method = OodMethod::OpenDomain;
    CHECK_THROWS(run_experiment(c));
  }
  SUBCASE("MSP baseline runs alongside") {
    auto c = tiny_experiment();
    c.n_seeds = 1;
    c.run_msp = true;
    c.msp_valid_ood = 6;
    const auto r = run_experiment(c);
    REQUIRE(r.seeds[0].msp);
    CHECK(r.msp_mean);
  }
}

TEST_CASE("sweeps") {
  SUBCASE("single-point grid equals run_experiment") {
    auto c = tiny_experiment();
    c.n_seeds = 1;
    const auto rows = sweep(c, {{"alpha", {c.train.alpha}}});
    REQUIRE(rows.size() == 1);
    const auto direct = run_experiment(c);
    CHECK(rows[0].report.mean.f1_all == direct.mean.f1_all);
    CHECK(rows[0].report.config_hash == direct.config_hash);
  }
  SUBCASE("grid order and parameters") {
    auto c = tiny_experiment();
    c.n_seeds = 1;
    c.train.max_epochs = 1;
    const auto rows = sweep(c, {{"dropout", {0.0, 0.3}}, {"tau", {0.1, 1.0}}});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].point.at("dropout") == 0.0);
    CHECK(rows[0].point.at("tau") == 0.1);
    CHECK(rows[1].point.at("tau") == 1.0);
    CHECK(rows[2].point.at("dropout") == 0.3);
    CHECK(rows[0].report.seeds[0].seed == rows[3].report.seeds[0].seed);
    CHECK(rows[0].report.config_hash != rows[1].report.config_hash);
    const std::string csv = sweep_csv(rows);
    CHECK(csv.find("dropout") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }
  SUBCASE("parameters") {
    ExperimentConfig c;
    apply_sweep_param(c, "beta", 0.5);
    CHECK(c.train.beta == 0.5);
    apply_sweep_param(c, "alpha", 0.2);
    CHECK(c.train.alpha == 0.2);
    apply_sweep_param(c, "tau", 5);
    CHECK(c.train.graph_temperature == 5);
    apply_sweep_param(c, "dropout", 0.3);
    CHECK(c.train.head_dropout == 0.3);
    CHECK(error_kind([&] { apply_sweep_param(c, "gamma", 1); }) == "invalid_config");
    CHECK(error_kind([&] { sweep(c, {}); }) == "invalid_config");
  }
}

TEST_CASE("report CSV follows the table column order") {
  auto c = tiny_experiment();
  c.n_seeds = 1;
  const auto r = run_experiment(c);
  const std::string csv = report_csv(r);
  const auto header = csv.substr(0, csv.find('\n'));
  REQUIRE(header.find("Acc-All") != std::string::npos);
  CHECK(header.find("Acc-All") < header.find("F1-All"));
  CHECK(header.find("F1-All") < header.find("F1-OOD"));
  CHECK(header.find("F1-OOD") < header.find("F1-IND"));
  CHECK(!version_string().empty());
}
