#include "softood/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "softood/error.hpp"
#include "softood/rng.hpp"

namespace softood {

using nlohmann::json;

namespace {

[[noreturn]] void fail_line(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  std::ostringstream os;
  os << path.string() << ": line " << line << ": " << msg;
  throw Error("invalid_dataset", os.str());
}

std::string label_to_string(const Label& label, const IntentSpace& intents) {
  switch (label.kind) {
    case LabelKind::Intent: return intents.name(label.intent);
    case LabelKind::Ood: return kOodLabelName;
    case LabelKind::Pseudo: break;
  }
  return {};
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Ind: return "ind";
    case Provenance::PseudoFm: return "pseudo-fm";
    case Provenance::PseudoOs: return "pseudo-os";
    case Provenance::PseudoLg: return "pseudo-lg";
    case Provenance::PseudoPd: return "pseudo-pd";
    case Provenance::Test: return "test";
  }
  return "unknown";
}

Provenance parse_provenance(const std::string& s) {
  for (auto p : {Provenance::Ind, Provenance::PseudoFm, Provenance::PseudoOs, Provenance::PseudoLg,
                 Provenance::PseudoPd, Provenance::Test})
    if (to_string(p) == s) return p;
  throw Error("invalid_dataset", "unknown provenance '" + s + "'");
}

bool is_pseudo(Provenance p) {
  return p == Provenance::PseudoFm || p == Provenance::PseudoOs || p == Provenance::PseudoLg ||
         p == Provenance::PseudoPd;
}

IntentSpace::IntentSpace(std::vector<std::string> ind_names) : names_(std::move(ind_names)) {
  if (names_.empty()) throw Error("invalid_dataset", "intent space needs at least one intent");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n == kOodLabelName) throw Error("invalid_dataset", "intent name collides with the OOD label");
    if (!seen.insert(n).second) throw Error("invalid_dataset", "duplicate intent name '" + n + "'");
  }
}

std::optional<std::size_t> IntentSpace::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t IntentSpace::class_of(const Label& label) const {
  switch (label.kind) {
    case LabelKind::Intent:
      if (label.intent >= k()) throw Error("invalid_label", "intent index out of range");
      return label.intent;
    case LabelKind::Ood: return ood_index();
    case LabelKind::Pseudo: break;
  }
  throw Error("invalid_label", "pseudo examples have no class");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("parse_error", path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    const auto& c = j.at("counts");
    m.counts = {c.at("train").get<std::size_t>(), c.at("valid").get<std::size_t>(),
                c.at("test").get<std::size_t>()};
    m.format_version = j.at("format_version").get<int>();
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error("invalid_manifest", path.string() + ": " + e.what());
  }
  if (m.format_version != 1) throw Error("invalid_manifest", "unsupported manifest format_version");
  if (m.feature_dim == 0) throw Error("invalid_manifest", "feature_dim must be positive");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j = {{"name", m.name},
            {"feature_dim", m.feature_dim},
            {"classes", m.classes},
            {"counts", {{"train", m.counts.train}, {"valid", m.counts.valid}, {"test", m.counts.test}}},
            {"format_version", m.format_version}};
  if (m.seed) j["seed"] = *m.seed;
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<Example> load_examples(const std::filesystem::path& path, const DatasetManifest& manifest,
                                   const IntentSpace& intents, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::vector<Example> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail_line(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail_line(path, lineno, "expected a JSON object");
    Example ex;
    try {
      ex.id = j.at("id").get<std::string>();
      ex.provenance = parse_provenance(j.at("provenance").get<std::string>());
      ex.features = j.at("features").get<std::vector<double>>();
      if (j.contains("text") && !j["text"].is_null()) ex.text = j["text"].get<std::string>();
    } catch (const json::exception& e) {
      fail_line(path, lineno, e.what());
    } catch (const Error& e) {
      fail_line(path, lineno, e.what());
    }
    if (ex.features.size() != manifest.feature_dim) {
      fail_line(path, lineno,
                "feature dimension " + std::to_string(ex.features.size()) + ", manifest says " +
                    std::to_string(manifest.feature_dim));
    }
    for (double v : ex.features)
      if (!std::isfinite(v)) fail_line(path, lineno, "non-finite feature value");
    if (!ids.insert(ex.id).second) fail_line(path, lineno, "duplicate id '" + ex.id + "'");

    const json label = j.contains("label") ? j["label"] : json(nullptr);
    if (is_pseudo(ex.provenance)) {
      if (!label.is_null()) {
        if (!options.relabel_pseudo) fail_line(path, lineno, "pseudo example carries a label");
        if (options.relabeled) ++*options.relabeled;
      }
      ex.label = Label::pseudo();
    } else {
      if (!label.is_string()) fail_line(path, lineno, "labeled example needs a string label");
      const auto name = label.get<std::string>();
      if (name == kOodLabelName) {
        if (ex.provenance == Provenance::Ind) fail_line(path, lineno, "ind example labeled OOD");
        ex.label = Label::ood();
      } else if (auto idx = intents.index_of(name)) {
        ex.label = Label::of_intent(*idx);
      } else {
        fail_line(path, lineno, "unknown label '" + name + "'");
      }
    }
    out.push_back(std::move(ex));
  }
  if (options.expected_count && *options.expected_count != out.size()) {
    throw Error("count_mismatch", path.string() + ": " + std::to_string(out.size()) +
                                      " examples, manifest says " +
                                      std::to_string(*options.expected_count));
  }
  return out;
}

void write_examples(const std::vector<Example>& examples, const IntentSpace& intents,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  for (const auto& ex : examples) {
    json j;
    j["id"] = ex.id;
    if (ex.label.kind == LabelKind::Pseudo)
      j["label"] = nullptr;
    else
      j["label"] = label_to_string(ex.label, intents);
    j["features"] = ex.features;
    if (ex.text) j["text"] = *ex.text;
    j["provenance"] = to_string(ex.provenance);
    out << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir / "manifest.json");
  d.intents = IntentSpace(d.manifest.classes);
  d.train = load_examples(dir / "train.jsonl", d.manifest, d.intents, {.expected_count = d.manifest.counts.train});
  d.valid = load_examples(dir / "valid.jsonl", d.manifest, d.intents, {.expected_count = d.manifest.counts.valid});
  d.test = load_examples(dir / "test.jsonl", d.manifest, d.intents, {.expected_count = d.manifest.counts.test});
  if (std::filesystem::exists(dir / "valid_ood.jsonl"))
    d.valid_ood = load_examples(dir / "valid_ood.jsonl", d.manifest, d.intents);
  return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m = d.manifest;
  m.classes = d.intents.names();
  m.counts = {d.train.size(), d.valid.size(), d.test.size()};
  write_manifest(m, dir / "manifest.json");
  write_examples(d.train, d.intents, dir / "train.jsonl");
  write_examples(d.valid, d.intents, dir / "valid.jsonl");
  write_examples(d.test, d.intents, dir / "test.jsonl");
  if (!d.valid_ood.empty()) write_examples(d.valid_ood, d.intents, dir / "valid_ood.jsonl");
}

std::size_t ind_intent_count(std::size_t total, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("invalid_argument", "ind_ratio must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  return std::max<std::size_t>(n, 1);
}

Dataset make_ind_split(const Dataset& full, const SplitSpec& spec, std::vector<std::string>* selected_names) {
  const std::size_t total = full.intents.k();
  if (total < 2) throw Error("invalid_argument", "splitting needs at least two intents");
  const std::size_t k = ind_intent_count(total, spec.ind_ratio);

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  // old intent index -> new index, or nullopt for intents that become OOD
  std::vector<std::optional<std::size_t>> remap(total);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    remap[chosen[i]] = i;
    names.push_back(full.intents.name(chosen[i]));
  }
  if (selected_names) *selected_names = names;

  Dataset out;
  out.intents = IntentSpace(names);
  out.manifest = full.manifest;
  out.manifest.classes = names;
  out.manifest.seed = spec.seed;

  auto relabel = [&](const Example& ex) {
    Example copy = ex;
    if (ex.label.is_intent()) {
      auto m = remap.at(ex.label.intent);
      copy.label = m ? Label::of_intent(*m) : Label::ood();
    }
    return copy;
  };
  for (const auto& ex : full.train)
    if (ex.label.is_intent() && remap.at(ex.label.intent)) out.train.push_back(relabel(ex));
  for (const auto& ex : full.valid) {
    if (!ex.label.is_intent()) continue;
    if (remap.at(ex.label.intent)) {
      out.valid.push_back(relabel(ex));
    } else {
      Example o = relabel(ex);
      o.provenance = Provenance::Test;
      out.valid_ood.push_back(std::move(o));
    }
  }
  for (const auto& ex : full.test) out.test.push_back(relabel(ex));
  out.manifest.counts = {out.train.size(), out.valid.size(), out.test.size()};
  return out;
}

Dataset synth_clusters(const SynthConfig& c) {
  if (c.n_intents == 0 || c.n_per_intent == 0) throw Error("invalid_argument", "counts must be positive");
  if (c.dim < 2) throw Error("invalid_argument", "synthetic data needs dim >= 2");
  if (!(c.noise_sigma > 0.0)) throw Error("invalid_argument", "noise_sigma must be positive");
  if (!(c.center_scale >= 0.0)) throw Error("invalid_argument", "center_scale must be non-negative");

  Rng rng(c.seed);
  std::vector<Vector> centers(c.n_intents, Vector(c.dim));
  for (auto& center : centers) {
    double n = 0.0;
    do {
      for (double& x : center) x = rng.normal();
      n = norm2(center);
    } while (n < 1e-12);
    for (double& x : center) x *= c.center_scale / n;
  }

  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(c.n_per_intent)));
  const auto n_valid = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(c.n_per_intent)));

  Dataset d;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < c.n_intents; ++i) names.push_back("intent_" + std::to_string(i));
  d.intents = IntentSpace(names);
  for (std::size_t i = 0; i < c.n_intents; ++i) {
    for (std::size_t j = 0; j < c.n_per_intent; ++j) {
      Example ex;
      ex.id = "synth-" + std::to_string(i) + "-" + std::to_string(j);
      ex.features = centers[i];
      for (double& x : ex.features) x += c.noise_sigma * rng.normal();
      ex.label = Label::of_intent(i);
      if (j < n_train) {
        ex.provenance = Provenance::Ind;
        d.train.push_back(std::move(ex));
      } else if (j < n_train + n_valid) {
        ex.provenance = Provenance::Ind;
        d.valid.push_back(std::move(ex));
      } else {
        ex.provenance = Provenance::Test;
        d.test.push_back(std::move(ex));
      }
    }
  }
  d.manifest.name = "synthetic";
  d.manifest.feature_dim = c.dim;
  d.manifest.classes = names;
  d.manifest.counts = {d.train.size(), d.valid.size(), d.test.size()};
  d.manifest.seed = c.seed;
  return d;
}

}  // namespace softood
