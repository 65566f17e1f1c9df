#include "softood/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "softood/config.hpp"
#include "softood/error.hpp"

#ifndef SOFTOOD_VERSION
#define SOFTOOD_VERSION "unknown"
#endif

namespace softood {

namespace {

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_var(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

TTestResult finish(double diff, double se, double df) {
  TTestResult r;
  r.df = df;
  if (se == 0.0) {
    r.t = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = diff / se;
  if (!(df > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  boost::math::students_t dist(df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

ConfusionMatrix confusion(std::span<const std::size_t> golds, std::span<const std::size_t> preds, std::size_t k) {
  if (golds.size() != preds.size()) throw Error("dimension_mismatch", "gold and prediction counts differ");
  if (golds.empty()) throw Error("invalid_argument", "confusion matrix over no examples");
  ConfusionMatrix m(k + 1);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] > k || preds[i] > k) throw Error("invalid_label", "label outside 0..k");
    ++m.at(golds[i], preds[i]);
  }
  return m;
}

MetricReport metrics(const ConfusionMatrix& m) {
  const std::size_t n = m.classes();
  const double total = static_cast<double>(m.total());
  if (total == 0.0) throw Error("invalid_argument", "metrics over an empty confusion matrix");
  MetricReport r;
  double trace = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += static_cast<double>(m.at(c, j));
      col += static_cast<double>(m.at(j, c));
    }
    const double tp = static_cast<double>(m.at(c, c));
    trace += tp;
    ClassScores s;
    s.precision = safe_div(tp, col);
    s.recall = safe_div(tp, row);
    s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
    r.per_class.push_back(s);
  }
  r.acc_all = trace / total;
  // single-label classification: micro precision = micro recall = accuracy
  r.micro_f1_all = r.acc_all;
  double ind = 0.0;
  for (std::size_t c = 0; c + 1 < n; ++c) ind += r.per_class[c].f1;
  r.f1_ood = r.per_class.back().f1;
  r.f1_ind = ind / static_cast<double>(n - 1);
  r.f1_all = (ind + r.f1_ood) / static_cast<double>(n);
  return r;
}

TTestResult t_test(std::span<const double> a, std::span<const double> b, bool paired) {
  if (a.empty() || b.empty()) throw Error("invalid_argument", "t-test needs non-empty samples");
  if (paired) {
    if (a.size() != b.size()) throw Error("dimension_mismatch", "paired t-test needs equal sample sizes");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double md = mean_of(d);
    const double n = static_cast<double>(d.size());
    return finish(md, std::sqrt(sample_var(d, md) / n), n - 1.0);
  }
  const double ma = mean_of(a), mb = mean_of(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sample_var(a, ma) / na, vb = sample_var(b, mb) / nb;
  const double se = std::sqrt(va + vb);
  double df = 0.0;
  const double denom = (na > 1 ? va * va / (na - 1.0) : 0.0) + (nb > 1 ? vb * vb / (nb - 1.0) : 0.0);
  if (denom > 0.0) df = (va + vb) * (va + vb) / denom;
  return finish(ma - mb, se, df);
}

std::vector<double> ExperimentReport::column(const std::function<double(const MetricReport&)>& metric) const {
  std::vector<double> out;
  for (const auto& s : seeds)
    if (s.ok) out.push_back(metric(s.report));
  return out;
}

std::size_t ExperimentReport::succeeded() const {
  return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; }));
}

MetricReport mean_report(std::span<const MetricReport> reports) {
  if (reports.empty()) throw Error("invalid_argument", "no reports to average");
  MetricReport m;
  m.per_class.resize(reports.front().per_class.size());
  for (const auto& r : reports) {
    m.acc_all += r.acc_all;
    m.f1_all += r.f1_all;
    m.f1_ind += r.f1_ind;
    m.f1_ood += r.f1_ood;
    m.micro_f1_all += r.micro_f1_all;
    for (std::size_t c = 0; c < m.per_class.size() && c < r.per_class.size(); ++c) {
      m.per_class[c].precision += r.per_class[c].precision;
      m.per_class[c].recall += r.per_class[c].recall;
      m.per_class[c].f1 += r.per_class[c].f1;
    }
  }
  const double n = static_cast<double>(reports.size());
  m.acc_all /= n;
  m.f1_all /= n;
  m.f1_ind /= n;
  m.f1_ood /= n;
  m.micro_f1_all /= n;
  for (auto& c : m.per_class) {
    c.precision /= n;
    c.recall /= n;
    c.f1 /= n;
  }
  return m;
}

SeedArtifacts run_single_seed(const ExperimentConfig& config, std::uint64_t seed) {
  Dataset full;
  if (config.dataset_dir) {
    full = load_dataset(*config.dataset_dir);
  } else {
    SynthConfig sc = config.synth;
    sc.seed = seed;
    full = synth_clusters(sc);
  }
  Dataset split = make_ind_split(full, {config.ind_ratio, seed});
  PseudoOodConfig oc = config.ood;
  oc.seed = seed;
  std::vector<Example> pseudo = generate_pseudo_ood(split.train, oc, split.manifest, split.intents);
  return run_on_split(std::move(split), std::move(pseudo), config, seed);
}

SeedArtifacts run_on_split(Dataset split, std::vector<Example> pseudo, const ExperimentConfig& config,
                           std::uint64_t seed) {
  SeedArtifacts a;
  a.split = std::move(split);
  a.pseudo = std::move(pseudo);
  const Dataset& d = a.split;

  TrainConfig tc = config.train;
  tc.seed = seed;
  std::optional<KWayClassifier> teacher;
  if (tc.scheme == LabelScheme::KnowD) teacher = train_kway_classifier(d.train, d.valid, d.intents, config.model, tc);
  a.trained = train(d.train, a.pseudo, d.valid, d.intents, config.model, tc, teacher ? &*teacher : nullptr);

  const DetectorModel& model = a.trained.model;
  a.boundaries.centroids = fit_centroids(model, d.train, a.pseudo, d.intents, config.adb_ind_only);
  a.boundaries.radii = fit_boundaries(model, d.train, a.pseudo, d.intents, a.boundaries.centroids, config.boundary).radii;
  a.boundaries.seed = seed;

  std::vector<std::size_t> gold, pred;
  for (const auto& ex : d.test) {
    a.predictions.push_back(detect(model, a.boundaries, ex.features));
    gold.push_back(d.intents.class_of(ex.label));
    pred.push_back(a.predictions.back().label);
  }
  a.report = metrics(confusion(gold, pred, d.intents.k()));
  return a;
}

namespace {

SeedResult run_seed_result(const ExperimentConfig& config, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    SeedArtifacts a = run_single_seed(config, seed);
    r.report = a.report;
    r.epochs = a.trained.history.size();
    r.best_epoch = a.trained.best_epoch;
    if (config.run_msp) {
      const Dataset& d = a.split;
      if (d.valid_ood.size() < config.msp_valid_ood)
        throw Error("invalid_dataset", "MSP needs " + std::to_string(config.msp_valid_ood) +
                                           " validation OOD examples, found " + std::to_string(d.valid_ood.size()));
      std::vector<Example> valid_ood(d.valid_ood.begin(),
                                     d.valid_ood.begin() + static_cast<std::ptrdiff_t>(config.msp_valid_ood));
      TrainConfig tc = config.train;
      tc.seed = seed;
      const KWayClassifier clf = train_kway_classifier(d.train, d.valid, d.intents, config.model, tc);
      const auto preds = msp_baseline(clf, d.valid, valid_ood, d.test, d.intents);
      std::vector<std::size_t> gold;
      for (const auto& ex : d.test) gold.push_back(d.intents.class_of(ex.label));
      r.msp = metrics(confusion(gold, preds, d.intents.k()));
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, std::size_t jobs) {
  if (config.n_seeds == 0) throw Error("invalid_config", "n_seeds must be >= 1");
  ExperimentReport rep;
  rep.name = config.name;
  rep.config_hash = config_hash(config);
  rep.seeds.resize(config.n_seeds);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.n_seeds; i = next++)
      rep.seeds[i] = run_seed_result(config, config.base_seed + i);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, config.n_seeds));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<MetricReport> ok, msp;
  for (const auto& s : rep.seeds) {
    if (!s.ok) continue;
    ok.push_back(s.report);
    if (s.msp) msp.push_back(*s.msp);
  }
  if (ok.empty()) {
    throw Error("experiment_failed",
                "every seed failed; first error: " + (rep.seeds.empty() ? std::string() : rep.seeds.front().error));
  }
  rep.mean = mean_report(ok);
  if (!msp.empty()) rep.msp_mean = mean_report(msp);
  return rep;
}

void apply_sweep_param(ExperimentConfig& config, const std::string& param, double value) {
  if (param == "tau")
    config.train.graph_temperature = value;
  else if (param == "dropout")
    config.train.head_dropout = value;
  else if (param == "alpha")
    config.train.alpha = value;
  else if (param == "beta")
    config.train.beta = value;
  else
    throw Error("invalid_config", "unknown sweep parameter '" + param + "' (tau, dropout, alpha, beta)");
}

std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& grid, std::size_t jobs) {
  if (grid.empty()) throw Error("invalid_config", "sweep grid is empty");
  for (const auto& axis : grid)
    if (axis.values.empty()) throw Error("invalid_config", "sweep axis '" + axis.param + "' has no values");

  std::vector<SweepRow> rows;
  std::vector<std::size_t> idx(grid.size(), 0);
  while (true) {
    ExperimentConfig c = base;
    SweepRow row;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      apply_sweep_param(c, grid[a].param, grid[a].values[idx[a]]);
      row.point[grid[a].param] = grid[a].values[idx[a]];
    }
    row.report = run_experiment(c, jobs);
    rows.push_back(std::move(row));
    // odometer increment, last axis fastest
    std::size_t a = grid.size();
    while (a > 0) {
      --a;
      if (++idx[a] < grid[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return rows;
    }
  }
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "seed,Acc-All,F1-All,F1-OOD,F1-IND,Micro-F1-All,epochs,status\n";
  for (const auto& s : report.seeds) {
    os << s.seed << ',';
    if (s.ok) {
      os << fixed(s.report.acc_all) << ',' << fixed(s.report.f1_all) << ',' << fixed(s.report.f1_ood) << ','
         << fixed(s.report.f1_ind) << ',' << fixed(s.report.micro_f1_all) << ',' << s.epochs << ",ok\n";
    } else {
      os << ",,,,,," << "failed\n";
    }
  }
  os << "mean," << fixed(report.mean.acc_all) << ',' << fixed(report.mean.f1_all) << ','
     << fixed(report.mean.f1_ood) << ',' << fixed(report.mean.f1_ind) << ',' << fixed(report.mean.micro_f1_all)
     << ",,\n";
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  if (rows.empty()) return {};
  for (const auto& [k, v] : rows.front().point) os << k << ',';
  os << "Acc-All,F1-All,F1-OOD,F1-IND,seeds,config_hash\n";
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.point) os << v << ',';
    os << fixed(r.report.mean.acc_all) << ',' << fixed(r.report.mean.f1_all) << ',' << fixed(r.report.mean.f1_ood)
       << ',' << fixed(r.report.mean.f1_ind) << ',' << r.report.succeeded() << ',' << r.report.config_hash << '\n';
  }
  return os.str();
}

std::string version_string() { return std::string("softood ") + SOFTOOD_VERSION; }

}  // namespace softood
