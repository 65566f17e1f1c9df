#include "softood/config.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <sstream>

#include "softood/error.hpp"

namespace softood {

namespace {

void require_object(const json& j, const char* section) {
  if (!j.is_object()) throw Error("invalid_config", std::string(section) + ": expected an object");
}

void check_keys(const json& j, const char* section, std::initializer_list<const char*> known) {
  require_object(j, section);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw Error("invalid_config", std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void take(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error("invalid_config", std::string(section) + "." + key + ": " + e.what());
  }
}

json matrix_to_json(const Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", m.values()}}; }

void matrix_from_json(const json& j, Matrix& m, const std::string& name) {
  if (j.at("rows").get<std::size_t>() != m.rows() || j.at("cols").get<std::size_t>() != m.cols())
    throw Error("invalid_checkpoint", "shape mismatch for parameter block " + name);
  const auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != m.size()) throw Error("invalid_checkpoint", "value count mismatch for " + name);
  std::copy(values.begin(), values.end(), m.values().begin());
}

json store_to_json(const ParamStore& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) {
    blocks.push_back({{"name", b.name},
                      {"value", matrix_to_json(b.value)},
                      {"first_moment", matrix_to_json(b.first_moment)},
                      {"second_moment", matrix_to_json(b.second_moment)}});
  }
  return {{"step", s.step}, {"blocks", blocks}};
}

void store_from_json(const json& j, ParamStore& s) {
  s.step = j.at("step").get<std::uint64_t>();
  const auto& blocks = j.at("blocks");
  if (blocks.size() != s.blocks.size()) throw Error("invalid_checkpoint", "parameter block count mismatch");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = s.blocks[i];
    if (blocks[i].at("name").get<std::string>() != b.name)
      throw Error("invalid_checkpoint", "unexpected parameter block " + blocks[i].at("name").get<std::string>());
    matrix_from_json(blocks[i].at("value"), b.value, b.name);
    matrix_from_json(blocks[i].at("first_moment"), b.first_moment, b.name);
    matrix_from_json(blocks[i].at("second_moment"), b.second_moment, b.name);
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"encoder_hidden", c.encoder_hidden}, {"feature_dim", c.feature_dim}, {"proj_hidden", c.proj_hidden},
          {"proj_dim", c.proj_dim},           {"head_hidden", c.head_hidden}, {"negative_slope", c.negative_slope}};
}

void overlay(ModelConfig& c, const json& j) {
  const char* s = "model";
  check_keys(j, s, {"encoder_hidden", "feature_dim", "proj_hidden", "proj_dim", "head_hidden", "negative_slope"});
  take(j, s, "encoder_hidden", c.encoder_hidden);
  take(j, s, "feature_dim", c.feature_dim);
  take(j, s, "proj_hidden", c.proj_hidden);
  take(j, s, "proj_dim", c.proj_dim);
  take(j, s, "head_hidden", c.head_hidden);
  take(j, s, "negative_slope", c.negative_slope);
  c.validate();
}

json to_json(const TrainConfig& c) {
  json j = {{"alpha", c.alpha},
            {"beta", c.beta},
            {"contrastive_temperature", c.contrastive_temperature},
            {"graph_temperature", c.graph_temperature},
            {"head_dropout", c.head_dropout},
            {"lr_encoder", c.lr_encoder},
            {"lr_heads", c.lr_heads},
            {"weight_decay", c.weight_decay},
            {"batch_ind", c.batch_ind},
            {"batch_ood", c.batch_ood},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"min_improvement", c.min_improvement},
            {"seed", c.seed},
            {"scheme", to_string(c.scheme)},
            {"usoul_epsilon", c.usoul_epsilon},
            {"graph_refresh_every", c.graph_refresh_every},
            {"include_self", c.include_self},
            {"graph_top_m", c.graph_top_m}};
  j["contrastive"] = c.contrastive ? json(*c.contrastive) : json(nullptr);
  return j;
}

void overlay(TrainConfig& c, const json& j) {
  const char* s = "train";
  check_keys(j, s,
             {"alpha", "beta", "contrastive_temperature", "graph_temperature", "head_dropout", "lr_encoder",
              "lr_heads", "weight_decay", "batch_ind", "batch_ood", "max_epochs", "patience", "min_improvement",
              "seed", "scheme", "usoul_epsilon", "graph_refresh_every", "include_self", "graph_top_m",
              "contrastive"});
  take(j, s, "alpha", c.alpha);
  take(j, s, "beta", c.beta);
  take(j, s, "contrastive_temperature", c.contrastive_temperature);
  take(j, s, "graph_temperature", c.graph_temperature);
  take(j, s, "head_dropout", c.head_dropout);
  take(j, s, "lr_encoder", c.lr_encoder);
  take(j, s, "lr_heads", c.lr_heads);
  take(j, s, "weight_decay", c.weight_decay);
  take(j, s, "batch_ind", c.batch_ind);
  take(j, s, "batch_ood", c.batch_ood);
  take(j, s, "max_epochs", c.max_epochs);
  take(j, s, "patience", c.patience);
  take(j, s, "min_improvement", c.min_improvement);
  take(j, s, "seed", c.seed);
  take(j, s, "usoul_epsilon", c.usoul_epsilon);
  take(j, s, "graph_refresh_every", c.graph_refresh_every);
  take(j, s, "include_self", c.include_self);
  take(j, s, "graph_top_m", c.graph_top_m);
  if (j.contains("scheme")) c.scheme = parse_label_scheme(j["scheme"].get<std::string>());
  if (j.contains("contrastive"))
    c.contrastive = j["contrastive"].is_null() ? std::nullopt : std::optional<bool>(j["contrastive"].get<bool>());
  c.validate();
}

json to_json(const PseudoOodConfig& c) {
  return {{"method", to_string(c.method)},
          {"count", c.count},
          {"seed", c.seed},
          {"lambda_lo", c.lambda_lo},
          {"lambda_hi", c.lambda_hi},
          {"cross_class_only", c.cross_class_only},
          {"rejection_quantile", c.rejection_quantile},
          {"source", c.source.string()}};
}

void overlay(PseudoOodConfig& c, const json& j) {
  const char* s = "ood";
  check_keys(j, s,
             {"method", "count", "seed", "lambda_lo", "lambda_hi", "cross_class_only", "rejection_quantile", "source"});
  if (j.contains("method")) c.method = parse_ood_method(j["method"].get<std::string>());
  take(j, s, "count", c.count);
  take(j, s, "seed", c.seed);
  take(j, s, "lambda_lo", c.lambda_lo);
  take(j, s, "lambda_hi", c.lambda_hi);
  take(j, s, "cross_class_only", c.cross_class_only);
  take(j, s, "rejection_quantile", c.rejection_quantile);
  if (j.contains("source")) c.source = j["source"].get<std::string>();
  c.validate();
}

json to_json(const SynthConfig& c) {
  return {{"n_intents", c.n_intents},       {"dim", c.dim},
          {"n_per_intent", c.n_per_intent}, {"center_scale", c.center_scale},
          {"noise_sigma", c.noise_sigma},   {"seed", c.seed}};
}

void overlay(SynthConfig& c, const json& j) {
  const char* s = "synth";
  check_keys(j, s, {"n_intents", "dim", "n_per_intent", "center_scale", "noise_sigma", "seed"});
  take(j, s, "n_intents", c.n_intents);
  take(j, s, "dim", c.dim);
  take(j, s, "n_per_intent", c.n_per_intent);
  take(j, s, "center_scale", c.center_scale);
  take(j, s, "noise_sigma", c.noise_sigma);
  take(j, s, "seed", c.seed);
}

json to_json(const BoundaryFitConfig& c) {
  json j = {{"lr", c.lr}, {"max_iterations", c.max_iterations}, {"tolerance", c.tolerance}};
  j["initial_radius"] = c.initial_radius ? json(*c.initial_radius) : json(nullptr);
  return j;
}

void overlay(BoundaryFitConfig& c, const json& j) {
  const char* s = "boundary";
  check_keys(j, s, {"lr", "max_iterations", "tolerance", "initial_radius"});
  take(j, s, "lr", c.lr);
  take(j, s, "max_iterations", c.max_iterations);
  take(j, s, "tolerance", c.tolerance);
  if (j.contains("initial_radius"))
    c.initial_radius =
        j["initial_radius"].is_null() ? std::nullopt : std::optional<double>(j["initial_radius"].get<double>());
  if (!(c.lr > 0.0)) throw Error("invalid_config", "boundary.lr must be positive");
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = {{"name", c.name},
                     {"dataset_dir", c.dataset_dir ? json(c.dataset_dir->string()) : json(nullptr)},
                     {"ind_ratio", c.ind_ratio},
                     {"adb_ind_only", c.adb_ind_only},
                     {"n_seeds", c.n_seeds},
                     {"base_seed", c.base_seed},
                     {"run_msp", c.run_msp},
                     {"msp_valid_ood", c.msp_valid_ood}};
  j["synth"] = to_json(c.synth);
  j["ood"] = to_json(c.ood);
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["boundary"] = to_json(c.boundary);
  return j;
}

void overlay(ExperimentConfig& c, const json& j) {
  check_keys(j, "config", {"experiment", "synth", "ood", "model", "train", "boundary"});
  if (j.contains("experiment")) {
    const json& e = j["experiment"];
    const char* s = "experiment";
    check_keys(e, s,
               {"name", "dataset_dir", "ind_ratio", "adb_ind_only", "n_seeds", "base_seed", "run_msp",
                "msp_valid_ood"});
    take(e, s, "name", c.name);
    if (e.contains("dataset_dir"))
      c.dataset_dir = e["dataset_dir"].is_null() ? std::nullopt
                                                 : std::optional<std::filesystem::path>(e["dataset_dir"].get<std::string>());
    take(e, s, "ind_ratio", c.ind_ratio);
    take(e, s, "adb_ind_only", c.adb_ind_only);
    take(e, s, "n_seeds", c.n_seeds);
    take(e, s, "base_seed", c.base_seed);
    take(e, s, "run_msp", c.run_msp);
    take(e, s, "msp_valid_ood", c.msp_valid_ood);
  }
  if (j.contains("synth")) overlay(c.synth, j["synth"]);
  if (j.contains("ood")) overlay(c.ood, j["ood"]);
  if (j.contains("model")) overlay(c.model, j["model"]);
  if (j.contains("train")) overlay(c.train, j["train"]);
  if (j.contains("boundary")) overlay(c.boundary, j["boundary"]);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("parse_error", path.string() + ": " + e.what());
  }
  ExperimentConfig c;
  overlay(c, j);
  return c;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string config_hash(const ExperimentConfig& c) { return fnv1a_hex(to_json(c).dump()); }

json to_json(const MetricReport& r) {
  json per = json::array();
  for (const auto& c : r.per_class) per.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
  return {{"acc_all", r.acc_all}, {"f1_all", r.f1_all},           {"f1_ood", r.f1_ood},
          {"f1_ind", r.f1_ind},   {"micro_f1_all", r.micro_f1_all}, {"per_class", per}};
}

json to_json(const ExperimentReport& r, bool with_timestamp) {
  json seeds = json::array();
  for (const auto& s : r.seeds) {
    json js = {{"seed", s.seed}, {"ok", s.ok}};
    if (s.ok) {
      js["metrics"] = to_json(s.report);
      js["epochs"] = s.epochs;
      js["best_epoch"] = s.best_epoch;
      if (s.msp) js["msp"] = to_json(*s.msp);
    } else {
      js["error"] = s.error;
    }
    seeds.push_back(js);
  }
  json j = {{"format_version", 1},
            {"name", r.name},
            {"config_hash", r.config_hash},
            {"seeds", seeds},
            {"mean", to_json(r.mean)},
            {"succeeded", r.succeeded()}};
  if (r.msp_mean) j["msp_mean"] = to_json(*r.msp_mean);
  json meta = {{"version", version_string()}};
  if (with_timestamp) meta["timestamp"] = static_cast<std::int64_t>(std::time(nullptr));
  j["metadata"] = meta;
  return j;
}

json checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "softood-checkpoint";
  j["version"] = version_string();
  j["input_dim"] = c.input_dim;
  j["intents"] = c.intents.names();
  j["model_config"] = to_json(c.model_config);
  j["train_config"] = to_json(c.train_config);
  j["dual_heads"] = c.model.heads.dual;
  j["params"] = {{"encoder", store_to_json(c.model.net.encoder().params())},
                 {"projection", store_to_json(c.model.net.projection().params())},
                 {"g1", store_to_json(c.model.heads.g1.params())},
                 {"g2", store_to_json(c.model.heads.g2.params())}};
  if (c.boundaries) {
    json cents = json::array();
    for (const auto& v : c.boundaries->centroids) cents.push_back(v);
    j["boundaries"] = {{"centroids", cents},
                       {"radii", c.boundaries->radii},
                       {"dataset_hash", c.boundaries->dataset_hash},
                       {"seed", c.boundaries->seed}};
  } else {
    j["boundaries"] = nullptr;
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("kind").get<std::string>() != "softood-checkpoint" || j.at("format_version").get<int>() != 1)
      throw Error("invalid_checkpoint", "not a version-1 checkpoint");
    Checkpoint c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.intents = IntentSpace(j.at("intents").get<std::vector<std::string>>());
    overlay(c.model_config, j.at("model_config"));
    overlay(c.train_config, j.at("train_config"));
    c.model = DetectorModel::create(c.input_dim, c.intents.class_count(), c.model_config, c.train_config);
    c.model.heads.dual = j.at("dual_heads").get<bool>();
    const auto& p = j.at("params");
    store_from_json(p.at("encoder"), c.model.net.encoder().params());
    store_from_json(p.at("projection"), c.model.net.projection().params());
    store_from_json(p.at("g1"), c.model.heads.g1.params());
    store_from_json(p.at("g2"), c.model.heads.g2.params());
    if (!j.at("boundaries").is_null()) {
      const auto& b = j["boundaries"];
      Boundaries bd;
      for (const auto& v : b.at("centroids")) bd.centroids.push_back(v.get<Vector>());
      bd.radii = b.at("radii").get<Vector>();
      bd.dataset_hash = b.at("dataset_hash").get<std::string>();
      bd.seed = b.at("seed").get<std::uint64_t>();
      if (bd.radii.size() != bd.centroids.size()) throw Error("invalid_checkpoint", "one radius per centroid required");
      c.boundaries = std::move(bd);
    }
    return c;
  } catch (const json::exception& e) {
    throw Error("invalid_checkpoint", e.what());
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out << checkpoint_to_json(c).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("parse_error", path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::string dataset_hash(const std::vector<Example>& examples) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& ex : examples) {
    os << ex.id << '|' << static_cast<int>(ex.label.kind) << ':' << ex.label.intent << '|';
    for (double v : ex.features) os << v << ',';
    os << '\n';
  }
  return fnv1a_hex(os.str());
}

}  // namespace softood
