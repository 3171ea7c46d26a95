// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// the number of failures.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <regex>

#include "../support.hpp"

using namespace sheet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

int cli(const std::string& args) {
  const int status = std::system((std::string(SHEET_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 1 ---------------------------------------------------------------------------
Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(2, 50);
  double worst = 0, worst_mono = 0;
  int undefined = 0;
  for (int i = 0; i < 200; ++i) {
    const auto n = len(rng);
    const bool ties = i % 2 == 0;
    const auto a = ties ? oracle::tied_vector(rng, n, 4) : oracle::random_vector(rng, n, 1, 5);
    const auto b = ties ? oracle::tied_vector(rng, n, 4) : oracle::random_vector(rng, n, 1, 5);
    worst = std::max(worst, std::abs(mse(a, b) - oracle::mse(a, b)));
    try {
      worst = std::max(worst, std::abs(lcc(a, b) - oracle::pearson(a, b)));
      const double s = srcc(a, b);
      worst = std::max(worst, std::abs(s - oracle::spearman(a, b)));
      std::vector<double> ta(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) ta[j] = std::exp(a[j]) + 3 * a[j] * a[j] * a[j];
      worst_mono = std::max(worst_mono, std::abs(srcc(ta, b) - s));
    } catch (const UndefinedCorrelation&) {
      ++undefined;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && worst_mono <= 1e-12 && secs < 10,
          "max err " + fmt("%.2e", worst) + ", monotone " + fmt("%.2e", worst_mono) + ", " +
              std::to_string(undefined) + " constant draws, " + fmt("%.2f", secs) + " s"};
}

// 2 ---------------------------------------------------------------------------
struct Overfit {
  Outcome outcome;
  std::string checkpoint;
  std::string data_dir;
};

Overfit overfit(const std::string& dir) {
  const auto t0 = Clock::now();
  SynthSpec spec;  // 8 systems x 10 utterances x 3 listeners
  support::synth_corpus(dir, spec);
  auto cfg = support::toy_config(dir, 2000);
  cfg.train.val_interval = 250;
  cfg.train.patience_steps = 2000;
  const auto data = load_run_data(cfg);
  Predictor model(cfg, data.listeners);
  Trainer trainer(model, data.train, data.dev, TrainerOptions{cfg.output_dir});
  const auto res = trainer.train();
  const auto preds = predict_rows(model, data.train);
  const auto rep = evaluate(to_map(preds), data.train, "train");
  const double secs = seconds_since(t0);
  const double sys = rep.sys_srcc.value_or(NAN);
  Overfit o;
  o.outcome = {sys >= 0.9 && rep.utt_mse <= 0.5 && secs < 600,
               "train sys_srcc " + fmt("%.4f", sys) + ", utt_mse " + fmt("%.4f", rep.utt_mse) + ", " +
                   std::to_string(res.final_step) + " steps, " + fmt("%.0f", secs) + " s"};
  o.checkpoint = cfg.output_dir + "/last.ckpt";
  o.data_dir = dir + "/data";
  return o;
}

// 3 ---------------------------------------------------------------------------
Outcome early_stopping() {
  const auto t0 = Clock::now();
  bool halts = true;
  for (int keep : {1, 5})
    for (long s_improve : {1250L, 2000L, 4750L, 10000L}) {
      TrainConfig cfg;
      cfg.val_interval = 250;
      cfg.max_steps = 100000;
      cfg.keep_best = keep;
      TrainingLoopHooks hooks;
      hooks.train_step = [](long) { return LossBreakdown{1.0, 1.0, 0.0, {}}; };
      hooks.validate = [&](long step) { return step <= s_improve ? static_cast<double>(step) : -1.0; };
      const auto res = run_training_loop(cfg, hooks);
      halts = halts && res.early_stopped && res.final_step == s_improve + cfg.patience_steps;
    }

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 40);
  int mismatches = 0;
  for (int stream = 0; stream < 1000; ++stream) {
    TrainConfig cfg;
    cfg.selection_metric = stream % 2 ? SelectionMetric::UttSrcc : SelectionMetric::UttMse;
    TrainState s;
    std::vector<std::pair<double, long>> all, top;
    long last_change = 0;
    for (int i = 1; i <= 200; ++i) {
      const double m = level(rng) / 40.0;
      const long step = 250L * i;
      const auto d = update_early_stop(s, m, step, cfg);
      all.emplace_back(m, step);
      auto sorted = all;
      const bool lower = lower_is_better(cfg.selection_metric);
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](const auto& a, const auto& b) { return lower ? a.first < b.first : a.first > b.first; });
      sorted.resize(std::min<std::size_t>(sorted.size(), 5));
      if (sorted != top) last_change = step;
      top = sorted;
      bool same = s.best_list.size() == top.size() && s.last_improvement_step == last_change &&
                  d.should_stop == (step - last_change >= cfg.patience_steps);
      for (std::size_t j = 0; same && j < top.size(); ++j)
        same = s.best_list[j].metric == top[j].first && s.best_list[j].step == top[j].second;
      if (!same) {
        ++mismatches;
        break;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {halts && mismatches == 0 && secs < 30,
          std::string(halts ? "halts at s+2000" : "wrong halt step") + ", " + std::to_string(mismatches) +
              "/1000 replay mismatches, " + fmt("%.2f", secs) + " s"};
}

// 4 ---------------------------------------------------------------------------
Outcome loss_contracts() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(1, 5);
  const double tau = 0.25, h = 1e-6;
  bool inside_zero = true, reduction = true;
  double worst_fd = 0;
  for (int i = 0; i < 2000; ++i) {
    const double y = d(rng), p = d(rng);
    if (std::abs(y - p) < tau) inside_zero = inside_zero && clipped_l1_grad(y, p, tau) == 0.0 && clipped_l1_loss(y, p, tau) == 0.0;
    else if (std::abs(y - p) > tau + 1e-3) {
      const double fd = (clipped_l1_loss(y, p + h, tau) - clipped_l1_loss(y, p - h, tau)) / (2 * h);
      const double g = clipped_l1_grad(y, p, tau);
      worst_fd = std::max(worst_fd, std::abs(fd - g) / std::abs(g));
    }
    reduction = reduction && clipped_l1_loss(y, p, 0.0) == l1_loss(y, p) && clipped_l1_grad(y, p, 0.0) == l1_grad(y, p);
  }
  double worst_pairs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = oracle::random_vector(rng, 16, 1, 5), y = oracle::random_vector(rng, 16, 1, 5);
    double sum = 0;
    int n = 0;
    for (int i = 0; i < 16; ++i)
      for (int j = i + 1; j < 16; ++j, ++n) sum += std::max(0.0, std::abs((pred[i] - pred[j]) - (y[i] - y[j])) - 0.1);
    worst_pairs = std::max(worst_pairs, std::abs(contrastive_loss(all_pairs(pred, y), 0.1) - sum / n));
  }
  return {inside_zero && reduction && worst_fd <= 1e-3 && worst_pairs <= 1e-9,
          "fd rel err " + fmt("%.2e", worst_fd) + ", contrastive err " + fmt("%.2e", worst_pairs) +
              (inside_zero ? "" : ", nonzero gradient in margin") + (reduction ? "" : ", tau=0 differs from L1")};
}

// 5 ---------------------------------------------------------------------------
Outcome knn_exactness() {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::uniform_real_distribution<double> sd(1, 5);
  const int dim = 16;
  auto key = [&] {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = nd(rng);
    return v;
  };
  Datastore store(dim);
  for (int i = 0; i < 1000; ++i) store.add(key(), sd(rng), "s" + std::to_string(i));
  double worst = 0, worst_limit = 0;
  bool ids = true;
  for (int k : {1, 4, 8})
    for (int q = 0; q < 50; ++q) {
      const Vector query = key();
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < store.size(); ++i) {
        double s = 0;
        for (int j = 0; j < dim; ++j) {
          const double diff = store.keys()(static_cast<Eigen::Index>(i), j) - query[j];
          s += diff * diff;
        }
        all.emplace_back(std::sqrt(s), i);
      }
      std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double z = 0, score = 0, mean = 0;
      for (int j = 0; j < k; ++j) z += std::exp(-all[j].first);
      for (int j = 0; j < k; ++j) {
        score += std::exp(-all[j].first) / z * store.values()[all[j].second];
        mean += store.values()[all[j].second] / k;
      }
      const auto r = knn_query(store, query, k, 1.0);
      for (int j = 0; j < k; ++j) ids = ids && r.neighbors[j] == all[j].second;
      worst = std::max(worst, std::abs(r.score - score));
      worst_limit = std::max(worst_limit, std::abs(knn_query(store, query, k, 1e9).score - mean));
    }
  return {ids && worst <= 1e-9 && worst_limit <= 1e-6,
          std::string(ids ? "neighbors match" : "neighbor mismatch") + ", score err " + fmt("%.2e", worst) +
              ", high-temperature err " + fmt("%.2e", worst_limit)};
}

// 6 ---------------------------------------------------------------------------
Outcome checkpoint_fidelity(const std::string& dir) {
  RunConfig cfg;
  cfg.datasets.push_back(DatasetSpec{});
  cfg.model.listener_modeling = true;
  cfg.train.seed = 6;
  Predictor p(cfg, {"a", "b", "c"});
  std::mt19937_64 rng(6);
  for (auto* s : p.param_stores())
    for (auto& [n, t] : *s)
      if (t.trainable)
        for (auto& v : t.data) v += std::normal_distribution<double>(0, 0.05)(rng);
  const std::string path = dir + "/m.ckpt";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  double worst = 0;
  std::normal_distribution<double> nd(0, 0.1);
  for (int i = 0; i < 20; ++i) {
    Waveform w;
    const auto n = 8000 + 997 * static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < n; ++j) w.samples.push_back(nd(rng));
    worst = std::max(worst, std::abs(p.predict_wave(w).utterance_score - q.predict_wave(w).utterance_score));
  }
  ModelRegistry(dir + "/registry.csv").add("acc", "v1", "m.ckpt");
  auto bytes = oracle::slurp(path);
  bytes[bytes.size() / 3] ^= 0x10;
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  bool rejected = false;
  try {
    registry_load(dir + "/registry.csv", "acc", "v1");
  } catch (const DigestMismatch&) {
    rejected = true;
  }
  return {worst <= 1e-6 && rejected,
          "max prediction diff " + fmt("%.2e", worst) + (rejected ? ", flipped byte rejected" : ", flipped byte accepted")};
}

// 7 ---------------------------------------------------------------------------
Outcome determinism(const std::string& dir) {
  std::vector<std::string> corpora;
  std::vector<std::vector<double>> traces;
  for (int run = 0; run < 2; ++run) {
    const std::string d = dir + "/run" + std::to_string(run);
    const auto m = support::synth_corpus(d);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(d))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string digest;
    for (const auto& f : files) {
      auto bytes = oracle::slurp(f.string());
      for (auto at = bytes.find(d); at != std::string::npos; at = bytes.find(d, at)) bytes.replace(at, d.size(), "<run>");
      digest += fs::relative(f, d).string() + " " + sha256_hex(bytes) + "\n";
    }
    corpora.push_back(digest);
    const auto cfg = support::toy_config(d, 10);
    const auto data = load_run_data(cfg);
    Predictor model(cfg, data.listeners);
    traces.push_back(Trainer(model, data.train, data.dev).train().loss_trace);
  }
  // manifests hold absolute wav paths; the run directory is masked before hashing
  const bool same_bytes = corpora[0] == corpora[1];
  const bool same_trace = traces[0].size() == 10 && traces[0] == traces[1];
  return {same_bytes && same_trace, std::string(same_trace ? "loss traces identical" : "loss traces differ") + ", " +
                                        (same_bytes ? "corpus bytes identical" : "corpus bytes differ")};
}

// 8 ---------------------------------------------------------------------------
Outcome pipeline_equivalence(const Overfit& o, const std::string& dir) {
  const std::string tests = " --test " + o.data_dir + "/test.csv --test " + o.data_dir + "/dev.csv";
  if (cli("predict --checkpoint " + o.checkpoint + " --manifest " + o.data_dir + "/test.csv --out " + dir + "/test.pred.csv") ||
      cli("predict --checkpoint " + o.checkpoint + " --manifest " + o.data_dir + "/dev.csv --out " + dir + "/dev.pred.csv") ||
      cli("evaluate --checkpoint " + o.checkpoint + tests + " --out " + dir + "/direct") ||
      cli("evaluate --predictions " + dir + "/test.pred.csv --predictions " + dir + "/dev.pred.csv" + tests + " --out " + dir +
          "/via_csv"))
    return {false, "a CLI stage exited non-zero"};

  double worst = 0;
  std::vector<EvaluationReport> reports;
  for (const auto& name : test_set_names({o.data_dir + "/test.csv", o.data_dir + "/dev.csv"})) {
    const std::string pa = dir + "/direct/" + name + ".report.txt", pb = dir + "/via_csv/" + name + ".report.txt";
    if (!fs::exists(pa) || !fs::exists(pb)) return {false, "missing report for " + name};
    const auto a = parse_report_kv(oracle::slurp(pa));
    const auto b = parse_report_kv(oracle::slurp(pb));
    const auto ma = a.metrics(), mb = b.metrics();
    if (a.n_utterances == 0 || ma.size() != mb.size() || a.n_utterances != b.n_utterances) return {false, "report shapes differ"};
    for (std::size_t i = 0; i < ma.size(); ++i) worst = std::max(worst, std::abs(ma[i].second - mb[i].second));
    reports.push_back(a);
  }

  // average block of the summary against the per-set reports
  const auto summary = oracle::slurp(dir + "/direct/summary.kv.txt");
  const auto at = summary.find("test_set=average\n");
  if (at == std::string::npos) return {false, "summary has no average block"};
  double worst_avg = 0;
  std::size_t n_avg = 0;
  const std::regex kv("(\\w+)=([^\\n]+)");
  const auto tail = summary.substr(at);
  for (std::sregex_iterator it(tail.begin(), tail.end(), kv), end; it != end; ++it) {
    const std::string key = (*it)[1];
    if (key == "test_set") continue;
    double mean = 0;
    for (const auto& r : reports)
      for (const auto& [k, v] : r.metrics())
        if (k == key) mean += v / static_cast<double>(reports.size());
    worst_avg = std::max(worst_avg, std::abs(std::stod((*it)[2]) - mean));
    ++n_avg;
  }
  return {worst <= 1e-9 && worst_avg <= 1e-9 && n_avg == 6,
          "report diff " + fmt("%.2e", worst) + ", average diff " + fmt("%.2e", worst_avg) + " over " +
              std::to_string(n_avg) + " metrics"};
}

// 9 ---------------------------------------------------------------------------
Outcome optimizer() {
  const double a = 2.5, c = 0.75, lr = 0.001, mu = 0.9;
  ParamStore params, grads;
  params.add("p", Tensor::zeros({1}));
  grads.add("p", Tensor::zeros({1}));
  params.at("p").data[0] = -3.0;
  MomentumSgd opt(lr, mu);
  double p = -3.0, v = 0.0, worst = 0;
  for (int step = 0; step < 100; ++step) {
    grads.at("p").data[0] = a * (params.at("p").data[0] - c);
    ParamStore* ps[] = {&params};
    const ParamStore* gs[] = {&grads};
    opt.step(ps, gs);
    v = mu * v + a * (p - c);
    p -= lr * v;
    worst = std::max(worst, std::abs(params.at("p").data[0] - p));
  }
  return {worst <= 1e-10, "max deviation " + fmt("%.2e", worst) + " over 100 steps"};
}

}  // namespace

int main() {
  oracle::TempDir root("acceptance");
  for (const char* sub : {"ckpt", "det", "pipe"}) fs::create_directories(root.path / sub);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.ok) ++failures;
    std::printf("%s %d %s: %s\n", o.ok ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "metric oracle equivalence", metric_oracles);
  Overfit fit;
  fit.outcome = {false, "not run"};
  report(2, "overfit sanity", [&] {
    fit = overfit(root / "overfit");
    return fit.outcome;
  });
  report(3, "early stopping exactness", early_stopping);
  report(4, "loss contracts", loss_contracts);
  report(5, "knn exactness", knn_exactness);
  report(6, "checkpoint fidelity", [&] { return checkpoint_fidelity(root / "ckpt"); });
  report(7, "determinism", [&] { return determinism(root / "det"); });
  report(8, "pipeline equivalence", [&] {
    if (fit.checkpoint.empty() || !fs::exists(fit.checkpoint)) return Outcome{false, "no trained checkpoint"};
    return pipeline_equivalence(fit, root / "pipe");
  });
  report(9, "optimizer correctness", optimizer);
  return failures;
}
