// sheet: recipe-style command line for speech quality predictors.
//
//   sheet make-synth --out DIR [...]
//   sheet prepare    --scores CSV --out DIR [...]
//   sheet train      --config YAML [--dry-run]
//   sheet evaluate   (--checkpoint F | --model NAME:TAG | --predictions CSV...) --test CSV...
//   sheet predict    (--checkpoint F | --model NAME:TAG) (--wav PATH | --manifest CSV --out CSV)
//   sheet registry   (add | list | verify) ...
//
// Exit codes: 0 ok, 1 usage/config, 2 data validation, 3 runtime.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "sheet/sheet.hpp"

namespace fs = std::filesystem;
using namespace sheet;

namespace {

struct ModelSource {
  std::string checkpoint;
  std::string model;  // name:tag
  std::string registry = "registry.csv";
  std::string cache_dir = ".sheet_cache";

  void add_options(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint archive");
    cmd->add_option("--model", model, "Registry entry as NAME:TAG");
    cmd->add_option("--registry", registry, "Registry file")->capture_default_str();
    cmd->add_option("--cache-dir", cache_dir, "Download cache for remote registry entries")->capture_default_str();
  }
  bool given() const { return !checkpoint.empty() || !model.empty(); }

  Predictor load() const {
    if (!checkpoint.empty() && !model.empty()) throw ConfigError("give either --checkpoint or --model, not both");
    if (!checkpoint.empty()) return load_checkpoint(checkpoint);
    const auto colon = model.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == model.size())
      throw ConfigError("--model must look like NAME:TAG");
    return registry_load(registry, model.substr(0, colon), model.substr(colon + 1), cache_dir);
  }
};

int cmd_make_synth(const SynthSpec& spec, const std::string& out) {
  const auto rows = make_synth(spec, out);
  std::printf("wrote %zu rated rows for %d systems x %d utterances x %d listeners to %s\n", rows.size(), spec.n_systems,
              spec.utts_per_system, spec.listeners, out.c_str());
  return 0;
}

int cmd_prepare(const std::string& scores, const std::string& out, const DatasetSpec& spec, const SplitSpec& split,
                const std::string& audio_root) {
  const auto m = prepare(scores, out, spec, split, audio_root);
  for (const auto* p : {&m.train, &m.dev, &m.test}) {
    const auto rows = read_manifest(*p, spec);
    std::printf("%-40s %6zu rows %5zu samples %4zu systems\n", p->c_str(), rows.size(), count_distinct_samples(rows),
                count_distinct_systems(rows));
  }
  return 0;
}

int cmd_train(const std::string& config_path, bool dry_run) {
  const RunConfig cfg = load_config(config_path);
  const RunData data = load_run_data(cfg);
  Predictor model(cfg, data.listeners);
  auto problems = check_inputs(model, data.train);
  auto dev_problems = check_inputs(model, data.dev);
  problems.insert(problems.end(), dev_problems.begin(), dev_problems.end());
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " missing input file(s):";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += "\n  " + problems[i];
    throw ValidationError(msg);
  }
  std::printf("config ok: %zu train rows (%zu samples), %zu dev rows, %zu listeners, backend %s\n", data.train.size(),
              count_distinct_samples(data.train), data.dev.size(), data.listeners.size(), cfg.encoder.backend.c_str());
  if (dry_run) return 0;

  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "config.yaml", std::ios::trunc) << to_yaml(cfg);
  Trainer trainer(model, data.train, data.dev, TrainerOptions{cfg.output_dir});
  const auto res = trainer.train();
  std::printf("stopped at step %ld (%s)\n", res.final_step, res.early_stopped ? "early stopping" : "max_steps");
  for (const auto& e : res.state.best_list)
    std::printf("  best: step %-7ld %s=%.6f  %s\n", e.step, to_string(cfg.train.selection_metric).c_str(), e.metric,
                e.checkpoint.c_str());
  std::printf("model: %s\n", (fs::path(cfg.output_dir) / "best.ckpt").c_str());
  return 0;
}

int cmd_evaluate(const ModelSource& src, const std::vector<std::string>& prediction_csvs,
                 const std::vector<std::string>& tests, const std::string& out_dir, double score_min, double score_max) {
  if (src.given() == !prediction_csvs.empty())
    throw ConfigError("evaluate: give exactly one of --checkpoint/--model or --predictions");
  if (!prediction_csvs.empty() && prediction_csvs.size() != 1 && prediction_csvs.size() != tests.size())
    throw ConfigError("evaluate: pass one --predictions file, or one per --test manifest");

  std::optional<Predictor> model;
  DatasetSpec spec;
  spec.score_min = score_min;
  spec.score_max = score_max;
  if (src.given()) {
    model.emplace(src.load());
    spec = model->config().primary_dataset();
  }
  const auto names = test_set_names(tests);
  std::vector<EvaluationReport> reports;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto rows = read_manifest(tests[i], spec);
    std::vector<std::pair<std::string, double>> preds;
    std::unordered_map<std::string, double> pred_map;
    if (model) {
      preds = predict_rows(*model, rows);
      pred_map = to_map(preds);
    } else {
      pred_map = read_predictions(prediction_csvs.size() == 1 ? prediction_csvs[0] : prediction_csvs[i]);
      for (const auto& r : aggregate_by_listener(rows))
        if (auto it = pred_map.find(r.sample_id); it != pred_map.end()) preds.emplace_back(r.sample_id, it->second);
    }
    EvaluationOutput e;
    e.report = evaluate(pred_map, rows, names[i], &e.rows);
    if (!out_dir.empty()) write_evaluation(e, preds, out_dir);
    reports.push_back(e.report);
  }
  const std::string table = format_summary_table(reports);
  std::cout << table;
  if (!out_dir.empty()) {
    std::ofstream(fs::path(out_dir) / "summary.txt", std::ios::trunc) << table;
    std::ofstream kv(fs::path(out_dir) / "summary.kv.txt", std::ios::trunc);
    for (const auto& r : reports) kv << format_report_kv(r) << "\n";
    if (reports.size() > 1) {
      kv << "test_set=average\n";
      for (const auto& [k, v] : average_metrics(reports)) kv << k << "=" << csv::format_double(v) << "\n";
    }
  }
  return 0;
}

int cmd_predict(const ModelSource& src, const std::string& wav, const std::string& manifest, const std::string& out,
                const std::string& listener) {
  if (!src.given()) throw ConfigError("predict: --checkpoint or --model is required");
  if (wav.empty() == manifest.empty()) throw ConfigError("predict: give exactly one of --wav or --manifest");
  const Predictor p = src.load();
  const std::optional<std::string> lis = listener.empty() ? std::nullopt : std::optional(listener);
  if (!wav.empty()) {
    UtteranceRef u{wav, fs::path(wav).stem().string(), lis, std::nullopt};
    std::printf("%.7f\n", p.predict(u).utterance_score);
    return 0;
  }
  const auto rows = read_manifest(manifest, p.config().primary_dataset());
  const auto preds = predict_rows(p, rows, lis);
  if (out.empty()) {
    for (const auto& [id, s] : preds) std::printf("%s,%s\n", id.c_str(), csv::format_double(s).c_str());
  } else {
    write_predictions(out, preds);
    std::printf("wrote %zu predictions to %s\n", preds.size(), out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech quality assessment toolkit: prepare data, train, evaluate and run MOS predictors"};
  app.require_subcommand(1);

  SynthSpec synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("make-synth", "Generate a synthetic rated corpus");
  c_synth->add_option("--out", synth_out, "Output directory")->required();
  c_synth->add_option("--systems", synth.n_systems)->capture_default_str();
  c_synth->add_option("--utts", synth.utts_per_system, "Utterances per system")->capture_default_str();
  c_synth->add_option("--listeners", synth.listeners)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--listener-noise", synth.listener_noise, "Std-dev of per-rating noise")->capture_default_str();
  c_synth->add_option("--sample-rate", synth.sample_rate)->capture_default_str();
  c_synth->add_option("--min-duration", synth.min_duration)->capture_default_str();
  c_synth->add_option("--max-duration", synth.max_duration)->capture_default_str();

  std::string prep_scores, prep_out, prep_root;
  DatasetSpec prep_spec;
  SplitSpec split;
  auto* c_prep = app.add_subcommand("prepare", "Validate a score list and write train/dev/test manifests");
  c_prep->add_option("--scores", prep_scores, "Score list CSV (manifest columns)")->required();
  c_prep->add_option("--out", prep_out, "Output directory")->required();
  c_prep->add_option("--audio-root", prep_root, "Base for relative wav paths (default: score list directory)");
  c_prep->add_option("--name", prep_spec.name, "Dataset id for rows without one")->capture_default_str();
  c_prep->add_option("--score-min", prep_spec.score_min)->capture_default_str();
  c_prep->add_option("--score-max", prep_spec.score_max)->capture_default_str();
  c_prep->add_option("--dev-fraction", split.dev_fraction)->capture_default_str();
  c_prep->add_option("--test-fraction", split.test_fraction)->capture_default_str();
  c_prep->add_option("--seed", split.seed)->capture_default_str();

  std::string train_config;
  bool dry_run = false;
  auto* c_train = app.add_subcommand("train", "Train a predictor from a run config");
  c_train->add_option("--config", train_config, "Run config (YAML)")->required();
  c_train->add_flag("--dry-run", dry_run, "Validate config and data, then exit");

  ModelSource eval_src;
  std::vector<std::string> eval_preds, eval_tests;
  std::string eval_out;
  double eval_min = 1.0, eval_max = 5.0;
  auto* c_eval = app.add_subcommand("evaluate", "Score test manifests with a model or a prediction CSV");
  eval_src.add_options(c_eval);
  c_eval->add_option("--predictions", eval_preds, "Prediction CSV(s) with columns sample_id,score");
  c_eval->add_option("--test", eval_tests, "Test manifest(s)")->required();
  c_eval->add_option("--out", eval_out, "Directory for reports and per-utterance CSVs");
  c_eval->add_option("--score-min", eval_min, "Score range for prediction-CSV mode")->capture_default_str();
  c_eval->add_option("--score-max", eval_max)->capture_default_str();

  ModelSource pred_src;
  std::string pred_wav, pred_manifest, pred_out, pred_listener;
  auto* c_pred = app.add_subcommand("predict", "Predict quality scores");
  pred_src.add_options(c_pred);
  c_pred->add_option("--wav", pred_wav, "Single audio file; prints one score");
  c_pred->add_option("--manifest", pred_manifest, "Manifest to score in batch");
  c_pred->add_option("--out", pred_out, "Prediction CSV for batch mode");
  c_pred->add_option("--listener", pred_listener, "Listener id (listener-conditioned models)");

  std::string reg_path = "registry.csv", reg_name, reg_tag, reg_ckpt, reg_digest, reg_cache = ".sheet_cache";
  auto* c_reg = app.add_subcommand("registry", "Manage the local model registry");
  c_reg->require_subcommand(1);
  c_reg->add_option("--registry", reg_path, "Registry file")->capture_default_str();
  auto* r_add = c_reg->add_subcommand("add", "Register a checkpoint (path or http URL) under NAME:TAG");
  r_add->add_option("--name", reg_name)->required();
  r_add->add_option("--tag", reg_tag)->required();
  r_add->add_option("--checkpoint", reg_ckpt, "Checkpoint path or URL")->required();
  r_add->add_option("--sha256", reg_digest, "Expected digest (required for URLs)");
  auto* r_list = c_reg->add_subcommand("list", "List entries");
  auto* r_verify = c_reg->add_subcommand("verify", "Check an entry's digest and load it");
  r_verify->add_option("--name", reg_name)->required();
  r_verify->add_option("--tag", reg_tag)->required();
  r_verify->add_option("--cache-dir", reg_cache)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) return cmd_make_synth(synth, synth_out);
    if (c_prep->parsed()) return cmd_prepare(prep_scores, prep_out, prep_spec, split, prep_root);
    if (c_train->parsed()) return cmd_train(train_config, dry_run);
    if (c_eval->parsed()) return cmd_evaluate(eval_src, eval_preds, eval_tests, eval_out, eval_min, eval_max);
    if (c_pred->parsed()) return cmd_predict(pred_src, pred_wav, pred_manifest, pred_out, pred_listener);
    if (c_reg->parsed()) {
      ModelRegistry reg(reg_path);
      if (r_add->parsed()) {
        const auto e = reg.add(reg_name, reg_tag, reg_ckpt, reg_digest.empty() ? std::nullopt : std::optional(reg_digest));
        std::printf("%s:%s -> %s (sha256 %s)\n", e.name.c_str(), e.tag.c_str(), e.location.c_str(), e.sha256.c_str());
      } else if (r_list->parsed()) {
        for (const auto& e : reg.entries())
          std::printf("%s:%s\t%s\t%s\n", e.name.c_str(), e.tag.c_str(), e.location.c_str(), e.sha256.c_str());
      } else if (r_verify->parsed()) {
        reg.load_model(reg_name, reg_tag, reg_cache);
        std::printf("%s:%s ok\n", reg_name.c_str(), reg_tag.c_str());
      }
      return 0;
    }
  } catch (const sheet::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
