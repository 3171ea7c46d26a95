#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "sheet/audio.hpp"
#include "sheet/early_stopping.hpp"
#include "sheet/losses.hpp"
#include "sheet/manifest.hpp"
#include "sheet/metrics.hpp"
#include "sheet/optimizer.hpp"
#include "sheet/plot.hpp"
#include "sheet/predictor.hpp"

namespace sheet {

// ---------------------------------------------------------------------------
// Generic loop

struct TrainingLoopHooks {
  /// Performs optimizer step `step` (1-based) and returns its loss.
  std::function<LossBreakdown(long step)> train_step;
  /// Selection metric on the validation set after `step`.
  std::function<double(long step)> validate;
  /// Persists the current model; returns a reference stored in the best list.
  std::function<std::string(long step)> save_checkpoint;
  /// Called for checkpoints that fall out of the best list.
  std::function<void(const BestEntry&)> discard_checkpoint;
  /// Optional: receives each step's loss and validation outcomes.
  std::function<void(long step, const LossBreakdown&)> on_step;
  std::function<void(long step, double metric, const EarlyStopDecision&)> on_validation;
  /// Optional: invoked before a DivergenceError is thrown.
  std::function<void(long step, const LossBreakdown&)> on_divergence;
};

struct TrainResult {
  TrainState state;
  std::vector<double> loss_trace;  // total loss per step
  long final_step = 0;
  bool early_stopped = false;
};

/// Runs until max_steps or until the best list has not changed for
/// patience_steps optimizer steps. Validation happens every val_interval
/// steps and at max_steps; the stop rule is checked after every step.
inline TrainResult run_training_loop(const TrainConfig& cfg, const TrainingLoopHooks& hooks) {
  TrainResult res;
  auto offer = [&](long step, double metric) {
    std::string ref;
    auto d = update_early_stop(res.state, metric, step, cfg);
    if (d.entered) {
      ref = hooks.save_checkpoint ? hooks.save_checkpoint(step) : std::string{};
      for (auto& e : res.state.best_list)
        if (e.step == step) e.checkpoint = ref;
      if (d.evicted && hooks.discard_checkpoint) hooks.discard_checkpoint(*d.evicted);
    }
    if (hooks.on_validation) hooks.on_validation(step, metric, d);
  };

  if (cfg.max_steps == 0) {
    const double m = hooks.validate ? hooks.validate(0) : NAN;
    offer(0, m);
    if (res.state.best_list.empty() && hooks.save_checkpoint) hooks.save_checkpoint(0);
    return res;
  }

  for (long step = 1; step <= cfg.max_steps; ++step) {
    const LossBreakdown loss = hooks.train_step(step);
    res.state.step = step;
    res.final_step = step;
    if (!std::isfinite(loss.total)) {
      if (hooks.on_divergence) hooks.on_divergence(step, loss);
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": loss=" + std::to_string(loss.total) +
                            " (primary=" + std::to_string(loss.primary) + ", contrastive=" + std::to_string(loss.contrastive) +
                            ")");
    }
    res.loss_trace.push_back(loss.total);
    if (hooks.on_step) hooks.on_step(step, loss);
    if (step % cfg.val_interval == 0 || step == cfg.max_steps) offer(step, hooks.validate(step));
    if (should_stop(res.state, step, cfg)) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Data

/// Decodes every distinct wav_path once, using `workers` threads.
inline std::unordered_map<std::string, Waveform> preload_waveforms(const std::vector<RatedUtterance>& rows,
                                                                   const Predictor& model, int workers) {
  std::vector<std::string> paths;
  {
    std::unordered_map<std::string, bool> seen;
    for (const auto& r : rows)
      if (seen.emplace(r.wav_path, true).second) paths.push_back(r.wav_path);
  }
  std::vector<Waveform> waves(paths.size());
  std::vector<std::exception_ptr> errors(paths.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < paths.size(); i = next++) {
      try {
        waves[i] = model.load_audio(paths[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::unordered_map<std::string, Waveform> out;
  for (std::size_t i = 0; i < paths.size(); ++i) out.emplace(paths[i], std::move(waves[i]));
  return out;
}

/// Endless shuffled pass over [0, n): reshuffles with the shared RNG at every
/// epoch boundary.
class EpochSampler {
 public:
  explicit EpochSampler(std::size_t n) : order_(n) { std::iota(order_.begin(), order_.end(), 0); }
  std::size_t next(std::mt19937_64& rng) {
    if (pos_ == 0) std::shuffle(order_.begin(), order_.end(), rng);
    const std::size_t v = order_[pos_];
    pos_ = (pos_ + 1) % order_.size();
    return v;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Model training

struct TrainerOptions {
  std::string output_dir;  // empty: nothing is written
  bool fit_normalization = true;
};

class Trainer {
 public:
  Trainer(Predictor& model, std::vector<RatedUtterance> train_rows, std::vector<RatedUtterance> dev_rows,
          TrainerOptions opts = {})
      : model_(model),
        cfg_(model.config().train),
        loss_cfg_(model.config().loss),
        opts_(std::move(opts)),
        listener_rows_(std::move(train_rows)),
        dev_rows_(aggregate_by_listener(dev_rows)),
        optimizer_(cfg_.lr, cfg_.momentum),
        rng_(cfg_.seed) {
    if (listener_rows_.empty()) throw ValidationError("training manifest is empty");
    if (dev_rows_.empty()) throw ValidationError("validation manifest is empty");
    averaged_rows_ = aggregate_by_listener(listener_rows_);
    const bool listener_mode = model_.config().model.listener_modeling;
    use_listener_rows_ = listener_mode || cfg_.training_rows == "listener";
    avg_sampler_.emplace(averaged_rows_.size());
    lis_sampler_.emplace(listener_rows_.size());

    auto all = listener_rows_;
    all.insert(all.end(), dev_rows_.begin(), dev_rows_.end());
    if (model_.uses_audio()) {
      waves_ = preload_waveforms(all, model_, model_.config().audio.num_workers);
      if (opts_.fit_normalization) {
        std::vector<Waveform> train_waves;
        for (const auto& r : averaged_rows_) train_waves.push_back(waves_.at(r.wav_path));
        std::get<ToySpectralEncoder>(model_.encoder()).fit_normalization(train_waves);
      }
    } else {
      const auto& enc = std::get<PrecomputedEncoder>(model_.encoder());
      for (const auto& r : all)
        if (!features_.count(r.sample_id)) features_.emplace(r.sample_id, enc.encode(r.sample_id));
    }
    for (auto* s : model_.param_stores()) grads_.push_back(s->zeros_like());
  }

  /// One optimizer update on a freshly drawn batch.
  LossBreakdown step() {
    const bool listener_mode = model_.config().model.listener_modeling;
    bool per_listener = use_listener_rows_;
    if (listener_mode) per_listener = !std::bernoulli_distribution(model_.config().model.mean_listener_prob)(rng_);
    std::vector<const RatedUtterance*> batch;
    for (int i = 0; i < cfg_.batch_size; ++i)
      batch.push_back(per_listener ? &listener_rows_[lis_sampler_->next(rng_)] : &averaged_rows_[avg_sampler_->next(rng_)]);

    std::vector<FrameFeatures> feats;
    std::vector<ConvCache> caches;
    auto* toy = std::get_if<ToySpectralEncoder>(&model_.encoder());
    const bool enc_trainable = toy && toy->config().trainable;
    if (toy) {
      std::vector<Waveform> waves;
      for (const auto* r : batch) waves.push_back(crop(waves_.at(r->wav_path), model_.config().audio.max_duration));
      feats = toy->encode_batch(repetitive_pad(waves), enc_trainable ? &caches : nullptr);
    } else {
      for (const auto* r : batch) feats.push_back(features_.at(r->sample_id));
    }

    const auto& head = model_.head();
    std::vector<HeadCache> hc(batch.size());
    std::vector<double> pooled(batch.size()), pred(batch.size()), target(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::optional<std::string> listener;
      if (listener_mode && per_listener) listener = batch[b]->listener_id;
      const Vector frames = head.decode_frames(feats[b], listener, batch[b]->dataset_id, &hc[b]);
      pooled[b] = time_pool(frames);
      const ScoreRange r = head.range_for(hc[b].dataset_index);
      pred[b] = head.config().clip ? range_clip(pooled[b], r.lo, r.hi) : pooled[b];
      target[b] = batch[b]->score;
    }
    LossBreakdown loss = total_loss(pred, target, loss_cfg_);
    if (!std::isfinite(loss.total)) return loss;

    for (auto& g : grads_) g.set_zero();
    ParamStore& head_grads = grads_.back();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const ScoreRange r = head.range_for(hc[b].dataset_index);
      const double d_pooled = loss.grad[b] * (head.config().clip ? range_clip_grad(pooled[b], r.lo, r.hi) : 1.0);
      const auto T = feats[b].frames();
      const Vector d_frames = Vector::Constant(T, d_pooled / static_cast<double>(T));
      const RowMatrix d_feat = head.backward(hc[b], d_frames, head_grads);
      if (enc_trainable) toy->backward_trimmed(caches[b], d_feat, grads_.front());
    }
    auto stores = model_.param_stores();
    std::vector<const ParamStore*> g;
    for (auto& x : grads_) g.push_back(&x);
    optimizer_.step(stores, g);
    return loss;
  }

  /// Predictions for the (listener-averaged) validation rows.
  std::vector<ScoredUtterance> predict_dev() const {
    std::vector<ScoredUtterance> out;
    for (const auto& r : dev_rows_) {
      const FrameFeatures f = model_.uses_audio() ? model_.features(waves_.at(r.wav_path)) : features_.at(r.sample_id);
      out.push_back({r.sample_id, r.system_id, r.score, model_.head().predict(f, std::nullopt, r.dataset_id).utterance_score});
    }
    return out;
  }

  /// Selection metric on the validation set; NaN when undefined (e.g.
  /// constant predictions make correlations undefined).
  double selection_value(const std::vector<ScoredUtterance>& dev, nlohmann::json* log = nullptr) const {
    if (cfg_.selection_metric == SelectionMetric::Loss) {
      double s = 0;
      for (const auto& u : dev) s += l1_loss(u.truth, u.prediction);
      const double v = s / static_cast<double>(dev.size());
      if (log) (*log)["dev_l1"] = v;
      return v;
    }
    try {
      const auto rep = compute_report(dev, "dev");
      if (log)
        for (const auto& [k, v] : rep.metrics()) (*log)[k] = v;
      switch (cfg_.selection_metric) {
        case SelectionMetric::UttMse: return rep.utt_mse;
        case SelectionMetric::UttLcc: return rep.utt_lcc;
        case SelectionMetric::UttSrcc: return rep.utt_srcc;
        case SelectionMetric::SysSrcc: return rep.sys_srcc.value_or(NAN);
        default: return NAN;
      }
    } catch (const UndefinedCorrelation&) {
      if (log) (*log)["note"] = "correlation undefined";
      return NAN;
    }
  }

  TrainResult train() {
    namespace fs = std::filesystem;
    const bool write = !opts_.output_dir.empty();
    const fs::path out(opts_.output_dir);
    std::ofstream log_file;
    if (write) {
      fs::create_directories(out / "checkpoints");
      if (cfg_.visualize) fs::create_directories(out / "viz");
      log_file.open(out / "train_log.jsonl", std::ios::trunc);
      if (!log_file) throw IoError("cannot write " + (out / "train_log.jsonl").string());
    }
    auto log = [&](const nlohmann::json& j) {
      if (write) log_file << j.dump() << "\n" << std::flush;
    };

    std::vector<ScoredUtterance> last_dev;
    TrainingLoopHooks hooks;
    hooks.train_step = [&](long) { return step(); };
    hooks.on_step = [&](long s, const LossBreakdown& l) {
      if (s <= 10 || s % cfg_.log_interval == 0)
        log({{"step", s}, {"loss", l.total}, {"primary", l.primary}, {"contrastive", l.contrastive}});
    };
    nlohmann::json val_record;
    hooks.validate = [&](long s) {
      last_dev = predict_dev();
      val_record = {{"step", s}, {"type", "validation"}};
      return selection_value(last_dev, &val_record);
    };
    hooks.save_checkpoint = [&](long s) -> std::string {
      if (!write) return {};
      const std::string p = (out / "checkpoints" / ("step_" + std::to_string(s) + ".ckpt")).string();
      save_checkpoint(model_, p);
      if (cfg_.visualize && !last_dev.empty()) {
        std::vector<ScatterPoint> pts;
        for (const auto& u : last_dev) pts.push_back({u.sample_id, u.truth, u.prediction});
        const auto r = model_.head().default_range();
        visualize_validation(pts, r.lo, r.hi, (out / "viz" / ("step_" + std::to_string(s))).string());
      }
      return p;
    };
    hooks.discard_checkpoint = [&](const BestEntry& e) {
      if (!e.checkpoint.empty()) {
        fs::remove(e.checkpoint);
        const std::string viz = (out / "viz" / ("step_" + std::to_string(e.step))).string();
        fs::remove(viz + ".png");
        fs::remove(viz + ".csv");
      }
    };
    hooks.on_validation = [&](long, double m, const EarlyStopDecision& d) {
      val_record["selection"] = std::isnan(m) ? nlohmann::json(nullptr) : nlohmann::json(m);
      val_record["entered_best"] = d.entered;
      log(val_record);
    };
    hooks.on_divergence = [&](long s, const LossBreakdown& l) {
      log({{"step", s}, {"type", "divergence"}, {"loss", l.total}, {"primary", l.primary}, {"contrastive", l.contrastive}});
      if (write) save_checkpoint(model_, (out / "diverged.ckpt").string());
    };

    TrainResult res = run_training_loop(cfg_, hooks);
    if (write) {
      save_checkpoint(model_, (out / "last.ckpt").string());
      const std::string best = res.state.best_list.empty() || res.state.best_list.front().checkpoint.empty()
                                   ? (out / "last.ckpt").string()
                                   : res.state.best_list.front().checkpoint;
      Predictor best_model = load_checkpoint(best);
      if (model_.config().knn.enabled) finalize_knn(best_model);
      save_checkpoint(best_model, (out / "best.ckpt").string());
      nlohmann::json summary = {{"type", "summary"}, {"final_step", res.final_step}, {"early_stopped", res.early_stopped}};
      for (const auto& e : res.state.best_list) summary["best"].push_back({{"step", e.step}, {"metric", e.metric}});
      log(summary);
    }
    return res;
  }

  const std::vector<RatedUtterance>& averaged_train_rows() const { return averaged_rows_; }

 private:
  void finalize_knn(Predictor& best) const {
    best.datastore() = build_datastore(best, listener_rows_);
    if (!best.config().knn.tune_lambda) return;
    std::vector<double> par, knn, tgt;
    const auto& fc = best.config().knn.fusion;
    for (const auto& r : dev_rows_) {
      const FrameFeatures f = best.uses_audio() ? best.features(waves_.at(r.wav_path)) : features_.at(r.sample_id);
      par.push_back(best.head().predict(f, std::nullopt, r.dataset_id).utterance_score);
      knn.push_back(knn_query(*best.datastore(), pooled_key(f), std::min<int>(fc.k, static_cast<int>(best.datastore()->size())),
                              fc.temperature)
                        .score);
      tgt.push_back(r.score);
    }
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
    RunConfig cfg = best.config();
    cfg.knn.fusion.lambda = tune_lambda(par, knn, tgt, grid);
    Predictor tuned(cfg, best.head().listeners());
    auto dst = tuned.param_stores();
    auto src = best.param_stores();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
    tuned.datastore() = best.datastore();
    best = std::move(tuned);
  }

  Predictor& model_;
  TrainConfig cfg_;
  LossConfig loss_cfg_;
  TrainerOptions opts_;
  std::vector<RatedUtterance> listener_rows_;
  std::vector<RatedUtterance> averaged_rows_;
  std::vector<RatedUtterance> dev_rows_;
  bool use_listener_rows_ = false;
  std::optional<EpochSampler> avg_sampler_, lis_sampler_;
  std::unordered_map<std::string, Waveform> waves_;
  std::unordered_map<std::string, FrameFeatures> features_;
  std::vector<ParamStore> grads_;
  MomentumSgd optimizer_;
  std::mt19937_64 rng_;
};

}  // namespace sheet
