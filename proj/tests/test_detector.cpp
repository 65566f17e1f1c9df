#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "softood/detector.hpp"
#include "softood/oodgen.hpp"
#include "model_fixtures.hpp"
#include "support.hpp"

using namespace softood;
using testing::constructed_model;
using testing::error_kind;

namespace {

Example make(std::string id, Vector f, Label label, Provenance p = Provenance::Ind) {
  Example e;
  e.id = std::move(id);
  e.features = std::move(f);
  e.label = label;
  e.provenance = p;
  return e;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("averaged prediction") {
  SUBCASE("opposite one-hot heads average to one half each") {
    const auto m = constructed_model(2, {60, -60}, {-60, 60});
    const auto p = avg_predict(m, Vector{1.0, 1.0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
  }
  SUBCASE("identical heads average to either") {
    const auto m = constructed_model(2, {0.3, 1.0, -2.0}, {0.3, 1.0, -2.0});
    CHECK(avg_predict(m, Vector{1.0, 1.0}) == head_predict(m.heads.g1, Vector{1.0, 1.0}));
  }
  SUBCASE("head exchange keeps the argmax; outputs are distributions") {
    Rng rng(3);
    ModelConfig mc;
    mc.encoder_hidden = mc.feature_dim = mc.proj_hidden = mc.head_hidden = 8;
    mc.proj_dim = 4;
    for (int t = 0; t < 50; ++t) {
      TrainConfig tc;
      tc.seed = t;
      auto m = DetectorModel::create(5, 4, mc, tc);
      auto swapped = m;
      std::swap(swapped.heads.g1, swapped.heads.g2);
      const Vector x = testing::random_vector(rng, 5);
      const auto a = avg_predict(m, x), b = avg_predict(swapped, x);
      CHECK(testing::is_distribution(a, 1e-12));
      CHECK(argmax_lowest(a) == argmax_lowest(b));
    }
  }
}

TEST_CASE("centroids") {
  const auto m = constructed_model(2, {0, 0, 0}, {0, 0, 0});
  const IntentSpace intents({"a", "b"});
  std::vector<Example> train{make("x", {0, 0}, Label::of_intent(0)), make("y", {2, 2}, Label::of_intent(0)),
                             make("z", {5, 1}, Label::of_intent(1))};
  const std::vector<Example> pseudo{make("p", {3, 3}, Label::pseudo(), Provenance::PseudoFm)};
  const auto c = fit_centroids(m, train, pseudo, intents);
  REQUIRE(c.size() == 3);
  CHECK(c[0] == Vector{1, 1});
  CHECK(c[1] == Vector{5, 1});
  CHECK(c[2] == Vector{3, 3});
  CHECK(fit_centroids(m, train, pseudo, intents, true).size() == 2);
  CHECK(error_kind([&] { fit_centroids(m, train, {}, intents); }) == "empty_class");

  std::reverse(train.begin(), train.end());
  const auto again = fit_centroids(m, train, pseudo, intents);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t d = 0; d < 2; ++d) CHECK(std::abs(again[i][d] - c[i][d]) <= 1e-12);
}

TEST_CASE("radius fitting") {
  SUBCASE("all points at distance r") {
    for (double r : {0.5, 2.0, 7.0})
      for (double init : {0.1, 1.0, 20.0}) {
        const std::vector<double> d(10, r);
        const std::vector<std::size_t> cls(10, 0);
        BoundaryFitConfig c;
        c.initial_radius = init;
        c.max_iterations = 5000;
        const auto fit = fit_radii(d, cls, 1, c);
        CHECK(std::abs(fit.radii[0] - r) <= 1e-3);
      }
  }
  SUBCASE("one point per class") {
    const std::vector<double> d{1.5, 4.0, 0.25};
    const std::vector<std::size_t> cls{0, 1, 2};
    BoundaryFitConfig c;
    c.initial_radius = 1.0;
    const auto fit = fit_radii(d, cls, 3, c);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(fit.radii[i] - d[i]) <= 1e-3);
  }
  SUBCASE("the fit lands on the median distance and scales with the data") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> d;
      std::vector<std::size_t> cls;
      for (int n = 0; n < 101; ++n) {
        d.push_back(std::abs(2.0 + rng.normal()));
        cls.push_back(0);
      }
      const auto fit = fit_radii(d, cls, 1);
      CHECK(fit.radii[0] > 0.0);
      CHECK(std::abs(fit.radii[0] - median(d)) <= 1e-2 * median(d));
      std::vector<double> doubled = d;
      for (double& x : doubled) x *= 2.0;
      const auto fit2 = fit_radii(doubled, cls, 1);
      CHECK(std::abs(fit2.radii[0] / fit.radii[0] - 2.0) <= 2e-2);
    }
  }
  SUBCASE("errors") {
    const std::vector<double> d{1.0};
    const std::vector<std::size_t> bad{3};
    CHECK(error_kind([&] { fit_radii(d, bad, 2); }) == "invalid_argument");
    CHECK(error_kind([&] { fit_radii({}, {}, 2); }) == "invalid_argument");
  }
}

TEST_CASE("boundaries through the model") {
  const auto m = constructed_model(2, {0, 0, 0}, {0, 0, 0});
  const IntentSpace intents({"a", "b"});
  const std::vector<Vector> centroids{{1, 1}, {5, 5}, {9, 1}};
  const std::vector<Example> train{make("x", {4, 1}, Label::of_intent(0)), make("y", {5, 7}, Label::of_intent(1))};
  const std::vector<Example> pseudo{make("p", {9, 1.5}, Label::pseudo(), Provenance::PseudoFm)};
  BoundaryFitConfig c;
  c.initial_radius = 1.0;
  const auto fit = fit_boundaries(m, train, pseudo, intents, centroids, c);
  CHECK(std::abs(fit.radii[0] - 3.0) <= 1e-3);
  CHECK(std::abs(fit.radii[1] - 2.0) <= 1e-3);
  CHECK(std::abs(fit.radii[2] - 0.5) <= 1e-3);
  CHECK(error_kind([&] { fit_boundaries(m, train, pseudo, intents, {{1, 1}}, c); }) == "invalid_argument");
}

TEST_CASE("decision rule") {
  Boundaries b;
  b.centroids = {{1, 1}, {5, 5}, {9, 9}};
  b.radii = {1.0, 1.0, 1.0};

  SUBCASE("inside class 0, prediction peaked at class 0") {
    const auto m = constructed_model(2, {5, 0, 0}, {5, 0, 0});
    const auto p = detect(m, b, Vector{1.2, 1.0});
    CHECK(p.label == 0);
    CHECK_FALSE(p.rejected_by_boundary);
    CHECK(p.min_boundary_margin(b) < 0.0);
  }
  SUBCASE("outside every boundary is OOD whatever the heads say") {
    const auto m = constructed_model(2, {9, 0, 0}, {9, 0, 0});
    const auto p = detect(m, b, Vector{3.0, 3.0});
    CHECK(p.label == 2);
    CHECK(p.rejected_by_boundary);
    CHECK(p.min_boundary_margin(b) > 0.0);
    CHECK(p.distances.size() == 3);
  }
  SUBCASE("inside a boundary, prediction peaked on OOD") {
    const auto m = constructed_model(2, {0, 0, 5}, {0, 0, 5});
    const auto p = detect(m, b, Vector{5.0, 5.5});
    CHECK(p.label == 2);
    CHECK_FALSE(p.rejected_by_boundary);
  }
  SUBCASE("ties go to the lowest index") {
    const auto m = constructed_model(2, {1, 1, 0}, {1, 1, 0});
    CHECK(detect(m, b, Vector{1.0, 1.0}).label == 0);
    CHECK(argmax_lowest(Vector{0.2, 0.4, 0.4}) == 1);
  }
  SUBCASE("the flag always matches the geometry") {
    Rng rng(9);
    const auto m = constructed_model(2, {0.1, 0.4, 0.2}, {0.3, 0.0, 0.1});
    for (int t = 0; t < 500; ++t) {
      const Vector x{std::abs(rng.normal()) * 5, std::abs(rng.normal()) * 5};
      const auto p = detect(m, b, x);
      bool inside = false;
      for (std::size_t i = 0; i < 3; ++i) inside |= p.distances[i] <= b.radii[i];
      CHECK(p.rejected_by_boundary == !inside);
      if (p.rejected_by_boundary) CHECK(p.label == 2);
      const auto again = detect(m, b, x);
      CHECK(again.label == p.label);
      CHECK(again.distribution == p.distribution);
    }
  }
}

TEST_CASE("MSP baseline") {
  CHECK(msp_decide(Vector{0.6, 0.4}, 0.0) == 0);
  CHECK(msp_decide(Vector{0.4, 0.6}, 0.0) == 1);
  CHECK(msp_decide(Vector{0.99, 0.01}, 1.0 + 1e-9) == 2);
  CHECK(msp_decide(Vector{1.0, 0.0}, 1.0 + 1e-9) == 2);

  SynthConfig sc;
  sc.seed = 2;
  const Dataset split = make_ind_split(synth_clusters(sc), {0.5, 2});
  ModelConfig mc;
  mc.encoder_hidden = mc.feature_dim = mc.head_hidden = 16;
  TrainConfig tc;
  tc.max_epochs = 20;
  tc.lr_encoder = tc.lr_heads = 1e-3;
  tc.batch_ind = 32;
  const auto clf = train_kway_classifier(split.train, split.valid, split.intents, mc, tc);
  MspThreshold chosen;
  const auto pred = msp_baseline(clf, split.valid, split.valid_ood, split.test, split.intents, &chosen);
  CHECK(pred.size() == split.test.size());
  CHECK(chosen.threshold > 0.0);
  CHECK(chosen.threshold <= 1.0);
  CHECK(chosen.valid_f1_all > 0.0);
  CHECK(error_kind([&] { choose_msp_threshold(clf, split.valid, {}, split.intents); }) == "invalid_dataset");
}
