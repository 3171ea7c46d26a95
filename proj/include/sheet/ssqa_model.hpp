#pragma once

// Score head: per-frame decoder -> optional per-dataset affine -> mean time
// pooling -> optional range clipping.
//
// With listener modeling enabled, a listener embedding is concatenated to
// every frame before decoding. Row 0 of the embedding table is the reserved
// mean listener used when no (or an unknown, in relaxed mode) listener is
// given.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sheet/common.hpp"
#include "sheet/encoder.hpp"
#include "sheet/tensor.hpp"

namespace sheet {

inline const std::string kMeanListener = "__mean_listener__";

enum class Activation { Relu, Tanh };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}
inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

struct ScoreRange {
  double lo = 1.0;
  double hi = 5.0;
};

struct HeadConfig {
  int input_dim = 64;
  int hidden = 256;  // 0 selects a plain linear decoder
  Activation activation = Activation::Relu;
  bool clip = true;
  bool listener_modeling = false;
  int listener_emb_dim = 32;
  bool strict_listeners = false;
  bool multi_dataset = false;
};

struct ScorePrediction {
  double utterance_score = 0.0;
  Vector frame_scores;
  std::string listener_id;  // empty when listener modeling is off
  std::string dataset_id;   // empty when multi-dataset mode is off
};

inline double time_pool(std::span<const double> frame_scores) {
  if (frame_scores.empty()) throw std::invalid_argument("time_pool: empty frame score sequence");
  double s = 0.0;
  for (double v : frame_scores) s += v;
  return s / static_cast<double>(frame_scores.size());
}
inline double time_pool(const Vector& v) { return time_pool(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))); }

inline double range_clip(double score, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("range_clip: lo must be < hi");
  return std::min(std::max(score, lo), hi);
}

/// Subgradient used in training: 1 inside [lo, hi], 0 outside.
inline double range_clip_grad(double score, double lo, double hi) {
  return (score >= lo && score <= hi) ? 1.0 : 0.0;
}

struct DatasetEntry {
  std::string name;
  ScoreRange range;
};

/// Intermediate values kept for backprop through one utterance.
struct HeadCache {
  RowMatrix input;     // T x (D [+ E])
  RowMatrix pre_act;   // T x H (MLP only)
  RowMatrix hidden;    // T x H (MLP only)
  Vector raw_scores;   // decoder output before the dataset affine
  int listener_index = -1;
  int dataset_index = -1;
};

class PredictorHead {
 public:
  /// listeners: ids seen in training (MEAN_LISTENER is added automatically).
  /// datasets: at least one entry; the first is the default calibration and range.
  PredictorHead(const HeadConfig& cfg, std::vector<std::string> listeners, std::vector<DatasetEntry> datasets,
                std::uint64_t seed)
      : cfg_(cfg), datasets_(std::move(datasets)) {
    if (cfg.input_dim <= 0) throw ConfigError("head: input_dim must be > 0");
    if (cfg.hidden < 0) throw ConfigError("head: decoder hidden size must be >= 0");
    if (datasets_.empty()) throw ConfigError("head: at least one dataset entry required");
    for (const auto& d : datasets_)
      if (!(d.range.lo < d.range.hi)) throw ConfigError("head: dataset '" + d.name + "' has lo >= hi");
    for (std::size_t i = 0; i < datasets_.size(); ++i) dataset_index_[datasets_[i].name] = static_cast<int>(i);

    std::mt19937_64 rng(seed);
    const int E = cfg.listener_modeling ? cfg.listener_emb_dim : 0;
    if (cfg.listener_modeling) {
      if (E <= 0) throw ConfigError("head: listener_emb_dim must be > 0");
      listeners_.push_back(kMeanListener);
      for (auto& l : listeners)
        if (l != kMeanListener && !listener_index_.count(l)) {
          listener_index_[l] = static_cast<int>(listeners_.size());
          listeners_.push_back(l);
        }
      listener_index_[kMeanListener] = 0;
      params.add("head.listener_emb", randn({listeners_.size(), static_cast<std::size_t>(E)}, 1.0, rng));
    }
    const auto in = static_cast<std::size_t>(cfg.input_dim + E);
    const double mid = 0.5 * (default_range().lo + default_range().hi);
    if (cfg.hidden > 0) {
      const auto H = static_cast<std::size_t>(cfg.hidden);
      params.add("head.fc1.weight", randn({in, H}, std::sqrt(2.0 / static_cast<double>(in)), rng));
      params.add("head.fc1.bias", Tensor::zeros({H}));
      params.add("head.out.weight", randn({H}, 1.0 / std::sqrt(static_cast<double>(H)), rng));
    } else {
      params.add("head.out.weight", randn({in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    }
    Tensor b = Tensor::zeros({1});
    b.data[0] = mid;  // start in the middle of the rating scale
    params.add("head.out.bias", std::move(b));
    if (cfg.multi_dataset) {
      Tensor aff = Tensor::zeros({datasets_.size(), 2});
      for (std::size_t i = 0; i < datasets_.size(); ++i) aff.data[2 * i] = 1.0;
      params.add("head.dataset_affine", std::move(aff));
    }
  }

  const HeadConfig& config() const { return cfg_; }
  const std::vector<std::string>& listeners() const { return listeners_; }
  const std::vector<DatasetEntry>& datasets() const { return datasets_; }
  const ScoreRange& default_range() const { return datasets_.front().range; }

  /// -1 when listener modeling is off.
  int resolve_listener(const std::optional<std::string>& id) const {
    if (!cfg_.listener_modeling) return -1;
    if (!id) return 0;
    auto it = listener_index_.find(*id);
    if (it != listener_index_.end()) return it->second;
    if (cfg_.strict_listeners) throw std::out_of_range("unknown listener_id '" + *id + "'");
    return 0;
  }

  /// Index into datasets(); a missing id selects the first dataset.
  int resolve_dataset(const std::optional<std::string>& id) const {
    if (!id || id->empty()) return 0;
    auto it = dataset_index_.find(*id);
    if (it == dataset_index_.end()) {
      if (cfg_.multi_dataset) throw std::out_of_range("unknown dataset_id '" + *id + "'");
      return 0;
    }
    return it->second;
  }

  ScoreRange range_for(int dataset_index) const { return datasets_[static_cast<std::size_t>(dataset_index)].range; }

  /// Frame scores (after the dataset affine when enabled).
  Vector decode_frames(const FrameFeatures& feats, const std::optional<std::string>& listener_id = std::nullopt,
                       const std::optional<std::string>& dataset_id = std::nullopt, HeadCache* cache = nullptr) const {
    if (feats.dim() != cfg_.input_dim)
      throw std::invalid_argument("head expects feature dim " + std::to_string(cfg_.input_dim) + ", got " +
                                  std::to_string(feats.dim()));
    if (feats.frames() < 1) throw std::invalid_argument("decode_frames: zero frames");
    HeadCache local;
    HeadCache& c = cache ? *cache : local;
    c.listener_index = resolve_listener(listener_id);
    c.dataset_index = resolve_dataset(dataset_id);

    const Eigen::Index T = feats.frames(), D = feats.dim();
    if (c.listener_index >= 0) {
      const auto emb = params.at("head.listener_emb").mat().row(c.listener_index);
      c.input.resize(T, D + emb.size());
      c.input.leftCols(D) = feats.matrix;
      c.input.rightCols(emb.size()).rowwise() = emb;
    } else {
      c.input = feats.matrix;
    }
    const double out_b = params.at("head.out.bias").data[0];
    if (cfg_.hidden > 0) {
      c.pre_act = c.input * params.at("head.fc1.weight").mat();
      c.pre_act.rowwise() += params.at("head.fc1.bias").vec().transpose();
      c.hidden = activate(c.pre_act);
      c.raw_scores = (c.hidden * params.at("head.out.weight").vec()).array() + out_b;
    } else {
      c.raw_scores = (c.input * params.at("head.out.weight").vec()).array() + out_b;
    }
    if (!cfg_.multi_dataset) return c.raw_scores;
    const auto aff = params.at("head.dataset_affine").mat().row(c.dataset_index);
    return (c.raw_scores.array() * aff(0) + aff(1)).matrix();
  }

  ScorePrediction predict(const FrameFeatures& feats, const std::optional<std::string>& listener_id = std::nullopt,
                          const std::optional<std::string>& dataset_id = std::nullopt) const {
    HeadCache c;
    ScorePrediction p;
    p.frame_scores = decode_frames(feats, listener_id, dataset_id, &c);
    const double pooled = time_pool(p.frame_scores);
    const ScoreRange r = range_for(c.dataset_index);
    p.utterance_score = cfg_.clip ? range_clip(pooled, r.lo, r.hi) : pooled;
    if (c.listener_index >= 0) p.listener_id = listeners_[static_cast<std::size_t>(c.listener_index)];
    if (cfg_.multi_dataset) p.dataset_id = datasets_[static_cast<std::size_t>(c.dataset_index)].name;
    return p;
  }

  /// Backprop from dLoss/d(frame scores) into parameter grads; returns
  /// dLoss/d(features) (T x D).
  RowMatrix backward(const HeadCache& c, const Vector& d_frames, ParamStore& grads) const {
    Vector d_raw = d_frames;
    if (cfg_.multi_dataset) {
      const auto aff = params.at("head.dataset_affine").mat().row(c.dataset_index);
      auto g = grads.at("head.dataset_affine").mat().row(c.dataset_index);
      g(0) += d_frames.dot(c.raw_scores);
      g(1) += d_frames.sum();
      d_raw = d_frames * aff(0);
    }
    grads.at("head.out.bias").data[0] += d_raw.sum();
    RowMatrix d_input;
    if (cfg_.hidden > 0) {
      const auto w_out = params.at("head.out.weight").vec();
      grads.at("head.out.weight").vec() += c.hidden.transpose() * d_raw;
      RowMatrix d_pre = d_raw * w_out.transpose();
      d_pre.array() *= activate_grad(c.pre_act, c.hidden).array();
      grads.at("head.fc1.weight").mat().noalias() += c.input.transpose() * d_pre;
      grads.at("head.fc1.bias").vec() += d_pre.colwise().sum().transpose();
      d_input = d_pre * params.at("head.fc1.weight").mat().transpose();
    } else {
      grads.at("head.out.weight").vec() += c.input.transpose() * d_raw;
      d_input = d_raw * params.at("head.out.weight").vec().transpose();
    }
    const Eigen::Index D = cfg_.input_dim;
    if (c.listener_index >= 0)
      grads.at("head.listener_emb").mat().row(c.listener_index) += d_input.rightCols(d_input.cols() - D).colwise().sum();
    return d_input.leftCols(D);
  }

  ParamStore params;

 private:
  RowMatrix activate(const RowMatrix& a) const {
    return cfg_.activation == Activation::Relu ? RowMatrix(a.cwiseMax(0.0)) : RowMatrix(a.array().tanh().matrix());
  }
  RowMatrix activate_grad(const RowMatrix& pre, const RowMatrix& post) const {
    if (cfg_.activation == Activation::Relu) return (pre.array() > 0.0).cast<double>().matrix();
    return (1.0 - post.array().square()).matrix();
  }

  HeadConfig cfg_;
  std::vector<std::string> listeners_;
  std::map<std::string, int> listener_index_;
  std::vector<DatasetEntry> datasets_;
  std::map<std::string, int> dataset_index_;
};

}  // namespace sheet
