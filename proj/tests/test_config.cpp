#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softood/config.hpp"
#include "support.hpp"

using namespace softood;
using testing::error_kind;
using testing::TempDir;
using testing::write_text;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.synth.n_intents = 4;
  c.synth.dim = 6;
  c.synth.n_per_intent = 30;
  c.model.encoder_hidden = c.model.feature_dim = c.model.proj_hidden = c.model.head_hidden = 12;
  c.model.proj_dim = 6;
  c.train.max_epochs = 2;
  c.train.batch_ind = c.train.batch_ood = 16;
  c.n_seeds = 1;
  return c;
}

Checkpoint trained_checkpoint(const ExperimentConfig& c) {
  auto art = run_single_seed(c, 4);
  return {c.synth.dim, art.split.intents, c.model, c.train, art.trained.model, art.boundaries};
}

}  // namespace

TEST_CASE("sections round-trip through JSON") {
  ExperimentConfig c;
  c.name = "rt";
  c.dataset_dir = "/data/x";
  c.train.scheme = LabelScheme::KnowD;
  c.train.contrastive = true;
  c.train.alpha = 0.3;
  c.ood.method = OodMethod::LatentLowDensity;
  c.ood.source = "pool.jsonl";
  c.boundary.initial_radius = 2.5;
  c.synth.seed = 77;
  c.n_seeds = 3;
  ExperimentConfig back;
  overlay(back, to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.train.scheme == LabelScheme::KnowD);
  CHECK(back.train.contrastive == std::optional<bool>(true));
  CHECK(back.boundary.initial_radius == std::optional<double>(2.5));
  CHECK(back.dataset_dir == c.dataset_dir);
}

TEST_CASE("overlay keeps unspecified defaults and rejects unknown keys") {
  ExperimentConfig c;
  overlay(c, json::parse(R"({"train":{"beta":0.5},"experiment":{"n_seeds":4}})"));
  CHECK(c.train.beta == 0.5);
  CHECK(c.train.alpha == 0.11);
  CHECK(c.n_seeds == 4);
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"trian":{}})")); }) == "invalid_config");
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"train":{"betta":0.5}})")); }) == "invalid_config");
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"train":{"beta":"high"}})")); }) == "invalid_config");
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"train":{"beta":2.0}})")); }) == "invalid_config");
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"train":{"scheme":"nope"}})")); }) == "invalid_config");
  CHECK(error_kind([&] { overlay(c, json::parse(R"({"ood":{"method":"gan"}})")); }) == "invalid_config");
}

TEST_CASE("loading config files") {
  TempDir dir("config");
  write_text(dir / "ok.json", R"({"experiment":{"name":"bench"},"model":{"proj_dim":32}})");
  const auto c = load_experiment_config(dir / "ok.json");
  CHECK(c.name == "bench");
  CHECK(c.model.proj_dim == 32);
  write_text(dir / "bad.json", "{");
  CHECK(error_kind([&] { load_experiment_config(dir / "bad.json"); }) == "parse_error");
  CHECK(error_kind([&] { load_experiment_config(dir / "missing.json"); }) == "io_error");
}

TEST_CASE("config hash") {
  ExperimentConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.train.alpha = 0.12;
  CHECK(config_hash(a) != config_hash(b));
  // FNV-1a reference values
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("reports serialize") {
  auto c = tiny_experiment();
  const auto r = run_experiment(c);
  const json with = to_json(r), without = to_json(r, false);
  CHECK(with.at("metadata").contains("timestamp"));
  CHECK_FALSE(without.at("metadata").contains("timestamp"));
  CHECK(without.at("config_hash") == config_hash(c));
  CHECK(without.at("seeds").size() == 1);
  CHECK(without.at("mean").at("f1_all") == r.mean.f1_all);
}

TEST_CASE("checkpoints") {
  const auto c = tiny_experiment();
  const Checkpoint ck = trained_checkpoint(c);
  TempDir dir("ckpt");
  save_checkpoint(ck, dir / "a.json");
  const Checkpoint back = load_checkpoint(dir / "a.json");
  save_checkpoint(back, dir / "b.json");
  CHECK(testing::read_text(dir / "a.json") == testing::read_text(dir / "b.json"));
  CHECK(back.intents == ck.intents);
  REQUIRE(back.boundaries);
  CHECK(back.boundaries->radii == ck.boundaries->radii);

  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Vector x = testing::random_vector(rng, c.synth.dim);
    const auto p = detect(ck.model, *ck.boundaries, x), q = detect(back.model, *back.boundaries, x);
    CHECK(p.label == q.label);
    CHECK(p.distribution == q.distribution);
  }

  json j = checkpoint_to_json(ck);
  j["params"]["g1"]["blocks"][0]["value"]["rows"] = 999;
  CHECK_THROWS(checkpoint_from_json(j));
  json k = checkpoint_to_json(ck);
  k["kind"] = "other";
  CHECK_THROWS(checkpoint_from_json(k));
  write_text(dir / "garbage.json", "[1,2");
  CHECK(error_kind([&] { load_checkpoint(dir / "garbage.json"); }) == "parse_error");
}

TEST_CASE("dataset hash") {
  const auto d = synth_clusters({});
  CHECK(dataset_hash(d.train) == dataset_hash(d.train));
  auto changed = d.train;
  changed[3].features[0] += 1e-12;
  CHECK(dataset_hash(changed) != dataset_hash(d.train));
}
