#include <CLI11.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "softood/config.hpp"
#include "softood/detector.hpp"
#include "softood/error.hpp"
#include "softood/eval.hpp"
#include "softood/graph.hpp"
#include "softood/oodgen.hpp"

using namespace softood;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out << text;
}

void summary(const std::string& command, const json& resolved) {
  std::cout << "softood " << command << ": " << resolved.dump() << '\n';
}

std::string label_name(const Label& l, const IntentSpace& intents) {
  if (l.kind == LabelKind::Pseudo) return "pseudo";
  return l.kind == LabelKind::Ood ? kOodLabelName : intents.name(l.intent);
}

std::string class_name(std::size_t c, const IntentSpace& intents) {
  return c == intents.ood_index() ? kOodLabelName : intents.name(c);
}

// --config wins over SOFTOOD_CONFIG; both are optional.
ExperimentConfig base_config(const std::string& flag) {
  std::string path = flag;
  if (path.empty())
    if (const char* env = std::getenv("SOFTOOD_CONFIG")) path = env;
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

DatasetManifest manifest_for(const Checkpoint& ck) {
  DatasetManifest m;
  m.name = "checkpoint";
  m.feature_dim = ck.input_dim;
  m.classes = ck.intents.names();
  return m;
}

std::vector<Example> load_pseudo(const fs::path& file, const Dataset& d) {
  return load_examples(file, d.manifest, d.intents);
}

// Flags that override the training-related parts of a config.
struct ModelFlags {
  std::optional<std::string> scheme;
  std::optional<double> alpha, beta, tau, temperature, dropout, lr_encoder, lr_heads, usoul_epsilon;
  std::optional<std::size_t> epochs, patience, batch_ind, batch_ood, top_m;
  std::optional<std::string> contrastive;
  bool include_self = false;
  bool adb_ind_only = false;
  std::optional<std::string> ood_method, ood_source;
  std::optional<std::size_t> ood_count;
  std::optional<double> lambda_lo, lambda_hi, quantile;

  void add(CLI::App* app) {
    app->add_option("--scheme", scheme, "Label scheme: asoul, asoul-ct, asoul-gs, onehot, usoul, knowd");
    app->add_option("--alpha", alpha, "Weight of the prior label in graph smoothing");
    app->add_option("--beta", beta, "Weight of the fixed part of the co-training target");
    app->add_option("--tau", tau, "Graph attention temperature");
    app->add_option("--temperature", temperature, "Contrastive temperature");
    app->add_option("--dropout", dropout, "Head dropout rate");
    app->add_option("--lr-encoder", lr_encoder, "Encoder learning rate");
    app->add_option("--lr-heads", lr_heads, "Head and projection learning rate");
    app->add_option("--usoul-epsilon", usoul_epsilon, "IND mass spread by the usoul scheme");
    app->add_option("--epochs", epochs, "Maximum training epochs");
    app->add_option("--patience", patience, "Early-stopping patience in epochs");
    app->add_option("--batch-ind", batch_ind, "IND batch size");
    app->add_option("--batch-ood", batch_ood, "Pseudo-OOD batch size");
    app->add_option("--top-m", top_m, "Keep the M most similar graph neighbors (0 keeps all)");
    app->add_option("--contrastive", contrastive, "Force the contrastive term on or off")
        ->check(CLI::IsMember({"on", "off"}));
    app->add_flag("--include-self", include_self, "Let a node attend to itself in the graph");
    app->add_flag("--adb-ind-only", adb_ind_only, "Fit boundaries for IND classes only");
    app->add_option("--ood-method", ood_method, "Pseudo-OOD generator: fm, os, lg, pd");
    app->add_option("--ood-source", ood_source, "Example file for the os and pd generators");
    app->add_option("--ood-count", ood_count, "Number of pseudo-OOD examples (0 matches the IND training set)");
    app->add_option("--lambda-lo", lambda_lo, "Lower mixup weight");
    app->add_option("--lambda-hi", lambda_hi, "Upper mixup weight");
    app->add_option("--quantile", quantile, "Density quantile for the lg generator");
  }

  void apply(ExperimentConfig& c) const {
    TrainConfig& t = c.train;
    if (scheme) t.scheme = parse_label_scheme(*scheme);
    if (alpha) t.alpha = *alpha;
    if (beta) t.beta = *beta;
    if (tau) t.graph_temperature = *tau;
    if (temperature) t.contrastive_temperature = *temperature;
    if (dropout) t.head_dropout = *dropout;
    if (lr_encoder) t.lr_encoder = *lr_encoder;
    if (lr_heads) t.lr_heads = *lr_heads;
    if (usoul_epsilon) t.usoul_epsilon = *usoul_epsilon;
    if (epochs) t.max_epochs = *epochs;
    if (patience) t.patience = *patience;
    if (batch_ind) t.batch_ind = *batch_ind;
    if (batch_ood) t.batch_ood = *batch_ood;
    if (top_m) t.graph_top_m = *top_m;
    if (contrastive) t.contrastive = *contrastive == "on";
    if (include_self) t.include_self = true;
    if (adb_ind_only) c.adb_ind_only = true;
    PseudoOodConfig& o = c.ood;
    if (ood_method) o.method = parse_ood_method(*ood_method);
    if (ood_source) o.source = *ood_source;
    if (ood_count) o.count = *ood_count;
    if (lambda_lo) o.lambda_lo = *lambda_lo;
    if (lambda_hi) o.lambda_hi = *lambda_hi;
    if (quantile) o.rejection_quantile = *quantile;
    t.validate();
    o.validate();
  }
};

// Where multi-seed commands get their data: a dataset directory, split anew
// per seed, or synthetic clusters.
struct SourceFlags {
  std::optional<std::string> data;
  std::optional<double> ind_ratio;
  std::optional<std::size_t> intents, dim, per_intent;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Full dataset directory (default: synthetic clusters)");
    app->add_option("--ind-ratio", ind_ratio, "Fraction of intents kept as IND");
    app->add_option("--intents", intents, "Synthetic intents");
    app->add_option("--dim", dim, "Synthetic feature dimension");
    app->add_option("--per-intent", per_intent, "Synthetic examples per intent");
  }

  void apply(ExperimentConfig& c) const {
    if (data) c.dataset_dir = *data;
    if (ind_ratio) c.ind_ratio = *ind_ratio;
    if (intents) c.synth.n_intents = *intents;
    if (dim) c.synth.dim = *dim;
    if (per_intent) c.synth.n_per_intent = *per_intent;
  }
};

std::string errors_footer(const std::string& kinds) { return "Errors: " + kinds; }

// Two-sided t statistic and p of a vs b on one metric.
TTestResult compare(const ExperimentReport& a, const ExperimentReport& b,
                    const std::function<double(const MetricReport&)>& metric, bool paired) {
  const auto x = a.column(metric), y = b.column(metric);
  if (x.size() < 2 || y.size() < 2 || (paired && x.size() != y.size())) return {};
  return t_test(x, y, paired);
}

std::string metrics_line(const MetricReport& r) {
  return "Acc-All " + num(r.acc_all) + " F1-All " + num(r.f1_all) + " F1-OOD " + num(r.f1_ood) + " F1-IND " +
         num(r.f1_ind);
}

std::map<std::string, std::string> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("parse_error", path.string() + ": empty predictions file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  const auto id_col = std::find(header.begin(), header.end(), "id") - header.begin();
  const auto label_col = std::find(header.begin(), header.end(), "label") - header.begin();
  if (id_col == static_cast<std::ptrdiff_t>(header.size()) || label_col == static_cast<std::ptrdiff_t>(header.size()))
    throw Error("parse_error", path.string() + ": header needs id and label columns");
  std::map<std::string, std::string> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < header.size())
      throw Error("parse_error", path.string() + ":" + std::to_string(lineno) + ": too few columns");
    if (!out.emplace(cells[id_col], cells[label_col]).second)
      throw Error("parse_error", path.string() + ":" + std::to_string(lineno) + ": duplicate id");
  }
  return out;
}

// Top two principal components, each signed so its largest entry is positive.
std::vector<std::array<double, 2>> pca2(const std::vector<Vector>& rows) {
  if (rows.size() < 2) throw Error("invalid_argument", "projection needs at least two examples");
  const auto n = static_cast<Eigen::Index>(rows.size()), d = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  std::vector<std::array<double, 2>> out(rows.size(), {0.0, 0.0});
  for (int c = 0; c < std::min<int>(2, static_cast<int>(d)); ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = proj(i);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Soft pseudo-labeling for out-of-domain intent detection over feature vectors"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "Base config file (default: $SOFTOOD_CONFIG)");
  app.footer("Errors are printed to stderr as {\"error\": kind, \"message\": text} with a non-zero exit.");

  std::optional<std::uint64_t> seed;
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "Random seed")->required(); };

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic Gaussian-cluster dataset");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--intents", sc.n_intents, "Number of intents")->capture_default_str();
  synth->add_option("--dim", sc.dim, "Feature dimension")->capture_default_str();
  synth->add_option("--per-intent", sc.n_per_intent, "Examples per intent")->capture_default_str();
  synth->add_option("--center-scale", sc.center_scale, "Radius of the sphere holding the centers")->capture_default_str();
  synth->add_option("--noise", sc.noise_sigma, "Within-cluster standard deviation")->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  add_seed(synth);
  synth->footer(errors_footer("io_error, invalid_argument"));

  // split
  auto* split = app.add_subcommand("split", "Select IND intents and relabel the rest as OOD");
  std::string split_data, split_out;
  double split_ratio = 0.25;
  split->add_option("--data", split_data, "Full dataset directory")->required();
  split->add_option("--ind-ratio", split_ratio, "Fraction of intents kept as IND")->capture_default_str();
  split->add_option("-o,--out", split_out, "Output directory")->required();
  add_seed(split);
  split->footer(errors_footer("io_error, parse_error, invalid_manifest, invalid_dataset, invalid_argument"));

  // gen-ood
  auto* gen = app.add_subcommand("gen-ood", "Generate pseudo-OOD examples from a split's training set");
  std::string gen_data, gen_out;
  ModelFlags gen_flags;
  gen->add_option("--data", gen_data, "Split dataset directory")->required();
  gen->add_option("--method", gen_flags.ood_method, "Generator: fm, os, lg, pd");
  gen->add_option("--source", gen_flags.ood_source, "Example file for os and pd");
  gen->add_option("--count", gen_flags.ood_count, "Number of examples (0 matches the training set)");
  gen->add_option("--lambda-lo", gen_flags.lambda_lo, "Lower mixup weight");
  gen->add_option("--lambda-hi", gen_flags.lambda_hi, "Upper mixup weight");
  gen->add_option("--quantile", gen_flags.quantile, "Density quantile for lg");
  gen->add_option("-o,--out", gen_out, "Output JSONL file")->required();
  add_seed(gen);
  gen->footer(errors_footer("io_error, parse_error, invalid_config, insufficient_examples, acceptance_failure"));

  // train
  auto* tr = app.add_subcommand("train", "Train a detector on a split and write a checkpoint");
  std::string train_data, train_out, train_report, train_history;
  std::optional<std::string> train_pseudo;
  ModelFlags train_flags;
  tr->add_option("--data", train_data, "Split dataset directory")->required();
  tr->add_option("--pseudo", train_pseudo, "Pseudo-OOD JSONL (default: generate from the config)");
  train_flags.add(tr);
  tr->add_option("-o,--out", train_out, "Checkpoint file")->required();
  tr->add_option("--report", train_report, "Write the test-set metric report (JSON) here");
  tr->add_option("--history", train_history, "Write per-epoch losses (CSV) here");
  add_seed(tr);
  tr->footer(errors_footer("io_error, parse_error, invalid_config, invalid_dataset, missing_label, empty_class"));

  // detect
  auto* det = app.add_subcommand("detect", "Predict labels for a JSONL file with a trained checkpoint");
  std::string det_model, det_input, det_out;
  det->add_option("--model", det_model, "Checkpoint file")->required();
  det->add_option("--input", det_input, "Examples (JSONL)")->required();
  det->add_option("-o,--out", det_out, "Predictions CSV: id,label,max_prob,min_boundary_margin")->required();
  det->footer(errors_footer("io_error, parse_error, invalid_checkpoint, dimension_mismatch"));

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against gold labels, or run a multi-seed experiment");
  std::string ev_pred, ev_gold, ev_manifest, ev_out, ev_csv;
  std::size_t ev_seeds = 0, ev_jobs = 1;
  bool ev_msp = false;
  ModelFlags ev_flags;
  SourceFlags ev_source;
  ev->add_option("--pred", ev_pred, "Predictions CSV with id and label columns");
  ev->add_option("--gold", ev_gold, "Gold JSONL");
  ev->add_option("--manifest", ev_manifest, "Manifest for --gold (default: next to it)");
  ev->add_option("--seeds", ev_seeds, "Run the full pipeline over this many seeds instead");
  ev->add_option("--seed", seed, "Base seed for --seeds");
  ev->add_option("--jobs", ev_jobs, "Seeds run in parallel")->capture_default_str();
  ev->add_flag("--msp", ev_msp, "Also run the MSP baseline");
  ev_source.add(ev);
  ev_flags.add(ev);
  ev->add_option("-o,--out", ev_out, "Report JSON");
  ev->add_option("--csv", ev_csv, "Per-seed CSV (with --seeds)");
  ev->footer(errors_footer("io_error, parse_error, missing_prediction, invalid_label, invalid_config, "
                           "experiment_failed, usage"));

  // ablate
  auto* ab = app.add_subcommand("ablate", "Compare label schemes over shared seeds");
  std::vector<std::string> ab_schemes{"asoul", "asoul-ct", "asoul-gs", "usoul", "knowd", "onehot"};
  std::size_t ab_seeds = 10, ab_jobs = 1;
  bool ab_paired = false;
  std::string ab_out;
  ModelFlags ab_flags;
  SourceFlags ab_source;
  ab->add_option("--schemes", ab_schemes, "Comma-separated schemes; the first is the reference")
      ->delimiter(',')
      ->capture_default_str();
  ab->add_option("--seeds", ab_seeds, "Seeds per scheme")->capture_default_str();
  ab->add_option("--jobs", ab_jobs, "Seeds run in parallel")->capture_default_str();
  ab->add_flag("--paired", ab_paired, "Paired t-test across seeds instead of Welch");
  ab_source.add(ab);
  ab_flags.add(ab);
  ab->add_option("-o,--out", ab_out, "CSV: one row per scheme, t-test on F1-All against the reference");
  add_seed(ab);
  ab->footer(errors_footer("io_error, invalid_config, experiment_failed"));

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid over tau, dropout, alpha, beta with shared seeds");
  std::vector<std::string> sw_grid;
  std::size_t sw_seeds = 10, sw_jobs = 1;
  std::string sw_out;
  ModelFlags sw_flags;
  SourceFlags sw_source;
  sw->add_option("--grid", sw_grid, "Axis as param=v1,v2,... (repeatable)")->required();
  sw->add_option("--seeds", sw_seeds, "Seeds per grid point")->capture_default_str();
  sw->add_option("--jobs", sw_jobs, "Seeds run in parallel")->capture_default_str();
  sw_source.add(sw);
  sw_flags.add(sw);
  sw->add_option("-o,--out", sw_out, "Sweep CSV");
  add_seed(sw);
  sw->footer(errors_footer("io_error, invalid_config, invalid_argument, experiment_failed"));

  // dump-labels
  auto* dl = app.add_subcommand("dump-labels", "Write prior and graph-smoothed labels of pseudo examples");
  std::string dl_model, dl_data, dl_pseudo, dl_out;
  dl->add_option("--model", dl_model, "Checkpoint file")->required();
  dl->add_option("--data", dl_data, "Split dataset directory")->required();
  dl->add_option("--pseudo", dl_pseudo, "Pseudo-OOD JSONL")->required();
  dl->add_option("-o,--out", dl_out, "CSV: id, l_p per class, l_g per class")->required();
  dl->footer(errors_footer("io_error, parse_error, invalid_checkpoint, empty_graph"));

  // project2d
  auto* pj = app.add_subcommand("project2d", "Project examples to 2-D with PCA");
  std::string pj_input, pj_manifest, pj_out;
  std::optional<std::string> pj_model;
  pj->add_option("--input", pj_input, "Examples (JSONL)")->required();
  pj->add_option("--manifest", pj_manifest, "Manifest for --input (default: next to it)");
  pj->add_option("--model", pj_model, "Project encoder outputs of this checkpoint instead of raw features");
  pj->add_option("-o,--out", pj_out, "CSV: id,label,pc1,pc2")->required();
  pj->footer(errors_footer("io_error, parse_error, invalid_argument, invalid_checkpoint"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw Error("usage", e.what());
  }

  if (synth->parsed()) {
    sc.seed = *seed;
    summary("synth", {{"synth", to_json(sc)}, {"out", synth_out}});
    write_dataset(synth_clusters(sc), synth_out);
    return 0;
  }

  if (split->parsed()) {
    summary("split", {{"data", split_data}, {"ind_ratio", split_ratio}, {"seed", *seed}, {"out", split_out}});
    write_dataset(make_ind_split(load_dataset(split_data), {split_ratio, *seed}), split_out);
    return 0;
  }

  if (gen->parsed()) {
    ExperimentConfig c = base_config(config_path);
    gen_flags.apply(c);
    c.ood.seed = *seed;
    summary("gen-ood", {{"ood", to_json(c.ood)}, {"data", gen_data}, {"out", gen_out}});
    const Dataset d = load_dataset(gen_data);
    const auto pseudo = generate_pseudo_ood(d.train, c.ood, d.manifest, d.intents);
    if (fs::path(gen_out).has_parent_path()) fs::create_directories(fs::path(gen_out).parent_path());
    write_examples(pseudo, d.intents, gen_out);
    return 0;
  }

  if (tr->parsed()) {
    ExperimentConfig c = base_config(config_path);
    train_flags.apply(c);
    c.dataset_dir = train_data;
    c.n_seeds = 1;
    c.base_seed = c.train.seed = c.ood.seed = *seed;
    summary("train", to_json(c));
    Dataset d = load_dataset(train_data);
    std::vector<Example> pseudo;
    if (train_pseudo) {
      pseudo = load_pseudo(*train_pseudo, d);
    } else {
      pseudo = generate_pseudo_ood(d.train, c.ood, d.manifest, d.intents);
    }
    const std::string train_hash = dataset_hash(d.train);
    SeedArtifacts art = run_on_split(std::move(d), std::move(pseudo), c, *seed);
    art.boundaries.dataset_hash = train_hash;
    const Checkpoint ck{art.split.manifest.feature_dim, art.split.intents, c.model, c.train, art.trained.model,
                        art.boundaries};
    save_checkpoint(ck, train_out);
    std::cout << "test " << metrics_line(art.report) << " best_epoch " << art.trained.best_epoch << '\n';
    if (!train_report.empty()) {
      ExperimentReport rep;
      rep.name = c.name;
      rep.config_hash = config_hash(c);
      SeedResult sr;
      sr.seed = *seed;
      sr.ok = true;
      sr.report = art.report;
      sr.epochs = art.trained.history.size();
      sr.best_epoch = art.trained.best_epoch;
      rep.seeds.push_back(sr);
      rep.mean = art.report;
      write_file(train_report, to_json(rep).dump(2) + "\n");
    }
    if (!train_history.empty()) {
      std::string csv = "epoch,contrastive,ind_cls,co,valid_loss,valid_accuracy,skipped_anchors\n";
      for (const auto& e : art.trained.history)
        csv += std::to_string(e.epoch) + "," + num(e.contrastive) + "," + num(e.ind_cls) + "," + num(e.co) + "," +
               num(e.valid_loss) + "," + num(e.valid_accuracy) + "," + std::to_string(e.skipped_anchors) + "\n";
      write_file(train_history, csv);
    }
    return 0;
  }

  if (det->parsed()) {
    summary("detect", {{"model", det_model}, {"input", det_input}, {"out", det_out}});
    const Checkpoint ck = load_checkpoint(det_model);
    if (!ck.boundaries) throw Error("invalid_checkpoint", "checkpoint has no boundaries");
    const auto examples = load_examples(det_input, manifest_for(ck), ck.intents);
    std::string csv = "id,label,max_prob,min_boundary_margin\n";
    for (const auto& ex : examples) {
      const Prediction p = detect(ck.model, *ck.boundaries, ex.features);
      csv += ex.id + "," + class_name(p.label, ck.intents) + "," + num(p.max_prob()) + "," +
             num(p.min_boundary_margin(*ck.boundaries)) + "\n";
    }
    write_file(det_out, csv);
    return 0;
  }

  if (ev->parsed()) {
    if (ev_seeds > 0) {
      if (!seed) throw Error("usage", "--seeds needs --seed");
      ExperimentConfig c = base_config(config_path);
      ev_source.apply(c);
      ev_flags.apply(c);
      c.n_seeds = ev_seeds;
      c.base_seed = *seed;
      c.run_msp = c.run_msp || ev_msp;
      summary("eval", to_json(c));
      const auto rep = run_experiment(c, ev_jobs);
      std::cout << "mean " << metrics_line(rep.mean) << " seeds " << rep.succeeded() << "/" << rep.seeds.size()
                << '\n';
      if (rep.msp_mean) std::cout << "msp " << metrics_line(*rep.msp_mean) << '\n';
      if (!ev_out.empty()) write_file(ev_out, to_json(rep).dump(2) + "\n");
      if (!ev_csv.empty()) write_file(ev_csv, report_csv(rep));
      return 0;
    }
    if (ev_pred.empty() || ev_gold.empty()) throw Error("usage", "eval needs --pred and --gold, or --seeds");
    const fs::path manifest_path =
        ev_manifest.empty() ? fs::path(ev_gold).parent_path() / "manifest.json" : fs::path(ev_manifest);
    summary("eval", {{"pred", ev_pred}, {"gold", ev_gold}, {"manifest", manifest_path.string()}});
    const DatasetManifest m = read_manifest(manifest_path);
    const IntentSpace intents(m.classes);
    const auto gold = load_examples(ev_gold, m, intents);
    const auto pred = read_predictions(ev_pred);
    std::vector<std::size_t> g, p;
    for (const auto& ex : gold) {
      const auto it = pred.find(ex.id);
      if (it == pred.end()) throw Error("missing_prediction", "no prediction for id '" + ex.id + "'");
      std::size_t cls = intents.ood_index();
      if (it->second != kOodLabelName) {
        const auto idx = intents.index_of(it->second);
        if (!idx) throw Error("invalid_label", "unknown predicted label '" + it->second + "'");
        cls = *idx;
      }
      g.push_back(intents.class_of(ex.label));
      p.push_back(cls);
    }
    const MetricReport r = metrics(confusion(g, p, intents.k()));
    std::cout << metrics_line(r) << " Micro-F1-All " << num(r.micro_f1_all) << '\n';
    if (!ev_out.empty()) write_file(ev_out, to_json(r).dump(2) + "\n");
    return 0;
  }

  if (ab->parsed()) {
    ExperimentConfig c = base_config(config_path);
    ab_source.apply(c);
    ab_flags.apply(c);
    c.n_seeds = ab_seeds;
    c.base_seed = *seed;
    std::vector<LabelScheme> schemes;
    for (const auto& s : ab_schemes) schemes.push_back(parse_label_scheme(s));
    if (schemes.empty()) throw Error("invalid_config", "no schemes given");
    json resolved = to_json(c);
    resolved["schemes"] = ab_schemes;
    resolved["paired"] = ab_paired;
    summary("ablate", resolved);
    std::vector<ExperimentReport> reports;
    for (auto s : schemes) {
      ExperimentConfig sc2 = c;
      sc2.train.scheme = s;
      sc2.name = c.name + "-" + to_string(s);
      reports.push_back(run_experiment(sc2, ab_jobs));
    }
    std::string csv = "scheme,Acc-All,F1-All,F1-OOD,F1-IND,seeds,t_F1-All,p_F1-All\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& m = reports[i].mean;
      const auto t = compare(reports[i], reports[0], [](const MetricReport& r) { return r.f1_all; }, ab_paired);
      csv += to_string(schemes[i]) + "," + num(m.acc_all) + "," + num(m.f1_all) + "," + num(m.f1_ood) + "," +
             num(m.f1_ind) + "," + std::to_string(reports[i].succeeded()) + "," + num(t.t) + "," + num(t.p_value) +
             "\n";
    }
    std::cout << csv;
    if (!ab_out.empty()) write_file(ab_out, csv);
    return 0;
  }

  if (sw->parsed()) {
    ExperimentConfig c = base_config(config_path);
    sw_source.apply(c);
    sw_flags.apply(c);
    c.n_seeds = sw_seeds;
    c.base_seed = *seed;
    std::vector<SweepAxis> grid;
    for (const auto& g : sw_grid) {
      const auto eq = g.find('=');
      if (eq == std::string::npos) throw Error("invalid_argument", "grid axis '" + g + "' is not param=values");
      SweepAxis axis{g.substr(0, eq), {}};
      std::stringstream ss(g.substr(eq + 1));
      for (std::string v; std::getline(ss, v, ',');) {
        try {
          axis.values.push_back(std::stod(v));
        } catch (const std::exception&) {
          throw Error("invalid_argument", "grid value '" + v + "' is not a number");
        }
      }
      if (axis.values.empty()) throw Error("invalid_argument", "grid axis '" + axis.param + "' has no values");
      ExperimentConfig probe = c;
      apply_sweep_param(probe, axis.param, axis.values.front());
      grid.push_back(std::move(axis));
    }
    json resolved = to_json(c);
    resolved["grid"] = sw_grid;
    summary("sweep", resolved);
    const std::string csv = sweep_csv(sweep(c, grid, sw_jobs));
    std::cout << csv;
    if (!sw_out.empty()) write_file(sw_out, csv);
    return 0;
  }

  if (dl->parsed()) {
    summary("dump-labels", {{"model", dl_model}, {"data", dl_data}, {"pseudo", dl_pseudo}, {"out", dl_out}});
    const Checkpoint ck = load_checkpoint(dl_model);
    const Dataset d = load_dataset(dl_data);
    if (!(d.intents == ck.intents)) throw Error("invalid_checkpoint", "checkpoint intents differ from the dataset");
    const auto pseudo = load_pseudo(dl_pseudo, d);
    const auto graph = build_graph(ck.model, d.train, pseudo, d.intents, ck.train_config.graph_config());
    std::string csv = "id";
    for (const char* prefix : {"lp_", "lg_"})
      for (std::size_t c = 0; c < d.intents.class_count(); ++c) csv += std::string(",") + prefix + class_name(c, d.intents);
    csv += "\n";
    for (const auto& ex : pseudo) {
      csv += ex.id;
      for (double v : prior_label(ex, d.intents)) csv += "," + num(v);
      for (double v : graph_smoothed_label(ex, graph)) csv += "," + num(v);
      csv += "\n";
    }
    write_file(dl_out, csv);
    return 0;
  }

  if (pj->parsed()) {
    summary("project2d", {{"input", pj_input}, {"model", pj_model ? *pj_model : ""}, {"out", pj_out}});
    std::optional<Checkpoint> ck;
    DatasetManifest m;
    if (pj_model) {
      ck = load_checkpoint(*pj_model);
      m = manifest_for(*ck);
    } else {
      m = read_manifest(pj_manifest.empty() ? fs::path(pj_input).parent_path() / "manifest.json"
                                            : fs::path(pj_manifest));
    }
    const IntentSpace intents(m.classes);
    const auto examples = load_examples(pj_input, m, intents);
    std::vector<Vector> rows;
    for (const auto& ex : examples) rows.push_back(ck ? ck->model.net.encode(ex) : ex.features);
    const auto coords = pca2(rows);
    std::string csv = "id,label,pc1,pc2\n";
    for (std::size_t i = 0; i < examples.size(); ++i)
      csv += examples[i].id + "," + label_name(examples[i].label, intents) + "," + num(coords[i][0]) + "," +
             num(coords[i][1]) + "\n";
    write_file(pj_out, csv);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
  }
  return 1;
}
