#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sheet/common.hpp"

namespace sheet {

enum class SelectionMetric { UttMse, UttLcc, UttSrcc, SysSrcc, Loss };

inline SelectionMetric parse_selection_metric(const std::string& s) {
  if (s == "utt_mse") return SelectionMetric::UttMse;
  if (s == "utt_lcc") return SelectionMetric::UttLcc;
  if (s == "utt_srcc") return SelectionMetric::UttSrcc;
  if (s == "sys_srcc") return SelectionMetric::SysSrcc;
  if (s == "loss") return SelectionMetric::Loss;
  throw ConfigError("unknown selection_metric '" + s + "' (utt_mse, utt_lcc, utt_srcc, sys_srcc, loss)");
}

inline std::string to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::UttMse: return "utt_mse";
    case SelectionMetric::UttLcc: return "utt_lcc";
    case SelectionMetric::UttSrcc: return "utt_srcc";
    case SelectionMetric::SysSrcc: return "sys_srcc";
    case SelectionMetric::Loss: return "loss";
  }
  return "?";
}

inline bool lower_is_better(SelectionMetric m) { return m == SelectionMetric::UttMse || m == SelectionMetric::Loss; }

struct TrainConfig {
  int batch_size = 16;
  double lr = 0.001;
  double momentum = 0.9;
  long max_steps = 100000;
  long patience_steps = 2000;
  int keep_best = 5;
  SelectionMetric selection_metric = SelectionMetric::UttSrcc;
  long val_interval = 250;
  std::uint64_t seed = 1337;
  std::string training_rows = "averaged";  // or "listener"; ignored with listener modeling
  long log_interval = 10;
  bool visualize = true;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (patience_steps < 1) throw ConfigError("train.patience_steps must be >= 1");
    if (keep_best < 1) throw ConfigError("train.keep_best must be >= 1");
    if (val_interval < 1) throw ConfigError("train.val_interval must be >= 1");
    if (log_interval < 1) throw ConfigError("train.log_interval must be >= 1");
    if (training_rows != "averaged" && training_rows != "listener")
      throw ConfigError("train.training_rows must be 'averaged' or 'listener'");
  }
};

struct BestEntry {
  double metric = 0.0;
  long step = 0;
  std::string checkpoint;

  bool operator==(const BestEntry&) const = default;
};

struct TrainState {
  long step = 0;
  std::vector<BestEntry> best_list;  // best first
  long last_improvement_step = 0;
};

struct EarlyStopDecision {
  bool entered = false;
  std::optional<BestEntry> evicted;
  bool should_stop = false;
};

/// True when `a` is strictly better than `b` under the metric direction.
/// NaN is never better than anything.
inline bool is_better(double a, double b, SelectionMetric m) {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return lower_is_better(m) ? a < b : a > b;
}

inline bool should_stop(const TrainState& s, long step, const TrainConfig& cfg) {
  return step - s.last_improvement_step >= cfg.patience_steps;
}

/// Offers a new validation value to the best-k list. The value enters when
/// the list has room or it beats the current worst entry; entering counts as
/// an improvement. Equal values keep the earlier entry ahead.
inline EarlyStopDecision update_early_stop(TrainState& s, double metric, long step, const TrainConfig& cfg,
                                           std::string checkpoint_ref = {}) {
  EarlyStopDecision d;
  s.step = step;
  const auto k = static_cast<std::size_t>(cfg.keep_best);
  const bool room = s.best_list.size() < k && !std::isnan(metric);
  if (room || (!s.best_list.empty() && is_better(metric, s.best_list.back().metric, cfg.selection_metric))) {
    if (!room) {
      d.evicted = s.best_list.back();
      s.best_list.pop_back();
    }
    auto pos = std::find_if(s.best_list.begin(), s.best_list.end(),
                            [&](const BestEntry& e) { return is_better(metric, e.metric, cfg.selection_metric); });
    s.best_list.insert(pos, BestEntry{metric, step, std::move(checkpoint_ref)});
    s.last_improvement_step = step;
    d.entered = true;
  }
  d.should_stop = should_stop(s, step, cfg);
  return d;
}

}  // namespace sheet
