#pragma once

// Stage-level helpers shared by the command-line tool and the tests.

#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sheet/config.hpp"
#include "sheet/manifest.hpp"
#include "sheet/metrics.hpp"
#include "sheet/predictor.hpp"
#include "sheet/trainer.hpp"

namespace sheet {

struct RunData {
  std::vector<RatedUtterance> train;
  std::vector<RatedUtterance> dev;
  std::vector<std::string> listeners;  // distinct listener ids in training rows
};

/// Reads and validates the train/dev manifests of every configured dataset.
inline RunData load_run_data(const RunConfig& cfg) {
  RunData d;
  std::set<std::string> seen;
  for (const auto& ds : cfg.datasets) {
    if (ds.train_manifest.empty() || ds.dev_manifest.empty())
      throw ConfigError("dataset '" + ds.name + "': train and dev manifests are required");
    auto tr = read_manifest(ds.train_manifest, ds);
    auto dv = read_manifest(ds.dev_manifest, ds);
    d.train.insert(d.train.end(), tr.begin(), tr.end());
    d.dev.insert(d.dev.end(), dv.begin(), dv.end());
  }
  for (const auto& r : d.train)
    if (r.listener_id && seen.insert(*r.listener_id).second) d.listeners.push_back(*r.listener_id);
  return d;
}

/// Existence check for every referenced audio file (toy backend) or feature
/// file (precomputed backend). Returns one message per problem.
inline std::vector<std::string> check_inputs(const Predictor& p, const std::vector<RatedUtterance>& rows) {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string f = rows[i].wav_path;
    if (const auto* pre = std::get_if<PrecomputedEncoder>(&p.encoder())) f = pre->path_for(rows[i].sample_id);
    if (!std::filesystem::exists(f)) problems.push_back("row " + std::to_string(i) + ": missing " + f);
  }
  return problems;
}

/// One prediction per distinct sample (listener-averaged view), in manifest order.
inline std::vector<std::pair<std::string, double>> predict_rows(const Predictor& p, const std::vector<RatedUtterance>& rows,
                                                                const std::optional<std::string>& listener = std::nullopt) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& r : aggregate_by_listener(rows)) {
    UtteranceRef u{r.wav_path, r.sample_id, listener, r.dataset_id};
    out.emplace_back(r.sample_id, p.predict(u).utterance_score);
  }
  return out;
}

inline std::unordered_map<std::string, double> to_map(const std::vector<std::pair<std::string, double>>& v) {
  return {v.begin(), v.end()};
}

/// Distinct, filesystem-friendly names for a list of test manifests.
inline std::vector<std::string> test_set_names(const std::vector<std::string>& manifests) {
  std::vector<std::string> names;
  std::map<std::string, int> count;
  for (const auto& m : manifests) {
    std::filesystem::path p(m);
    std::string n = p.stem().string();
    if (p.has_parent_path() && p.parent_path().has_filename()) n = p.parent_path().filename().string() + "_" + n;
    names.push_back(n);
  }
  for (auto& n : names) ++count[n];
  std::map<std::string, int> used;
  for (auto& n : names)
    if (count[n] > 1) n += "_" + std::to_string(used[n]++);
  return names;
}

struct EvaluationOutput {
  EvaluationReport report;
  std::vector<ScoredUtterance> rows;
};

/// Writes <out>/<name>.report.txt, <name>.predictions.csv and <name>.scored.csv.
inline void write_evaluation(const EvaluationOutput& e, const std::vector<std::pair<std::string, double>>& preds,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto base = fs::path(out_dir) / e.report.test_set;
  std::ofstream(base.string() + ".report.txt", std::ios::trunc) << format_report_kv(e.report);
  write_predictions(base.string() + ".predictions.csv", preds);
  write_scored_csv(base.string() + ".scored.csv", e.rows);
}

}  // namespace sheet
