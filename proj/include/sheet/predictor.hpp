#pragma once

// A complete predictor: config snapshot, encoder, head and optional kNN
// datastore. This is the unit saved to and restored from checkpoints.
//
// Checkpoint archive (little-endian):
//   "SHEETCKP"                       8-byte magic
//   uint32 format_version            currently 1
//   str    config                    YAML snapshot of the run config
//   uint32 n_listeners, str[...]     listener table (row order of head.listener_emb)
//   uint32 n_datasets, {str name, f64 lo, f64 hi}[...]
//   uint32 n_tensors, per tensor:
//     str name, uint8 trainable, uint32 ndim, uint64 dims[ndim],
//     uint8 dtype (1 = float64), float64 data[prod(dims)]
// where str = uint32 byte length followed by UTF-8 bytes.
// A kNN datastore, when present, is stored next to the archive as
// <archive>.knn.keys.feat and <archive>.knn.values.csv.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sheet/audio.hpp"
#include "sheet/binary_io.hpp"
#include "sheet/config.hpp"
#include "sheet/encoder.hpp"
#include "sheet/knn_retrieval.hpp"
#include "sheet/ssqa_model.hpp"

namespace sheet {

inline constexpr char kCheckpointMagic[8] = {'S', 'H', 'E', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Encoder make_encoder(const RunConfig& cfg) {
  if (cfg.encoder.backend == "precomputed") return PrecomputedEncoder(cfg.encoder.precomputed);
  return ToySpectralEncoder(cfg.encoder.toy, cfg.train.seed);
}

inline int encoder_dim(const Encoder& e) {
  return std::visit([](const auto& enc) { return enc.info().dim; }, e);
}

inline HeadConfig head_config(const RunConfig& cfg, int input_dim) {
  HeadConfig h;
  h.input_dim = input_dim;
  h.hidden = cfg.model.decoder_hidden;
  h.activation = parse_activation(cfg.model.activation);
  h.clip = cfg.model.clip;
  h.listener_modeling = cfg.model.listener_modeling;
  h.listener_emb_dim = cfg.model.listener_emb_dim;
  h.strict_listeners = cfg.model.strict_listeners;
  h.multi_dataset = cfg.model.multi_dataset;
  return h;
}

inline std::vector<DatasetEntry> dataset_entries(const RunConfig& cfg) {
  std::vector<DatasetEntry> out;
  for (const auto& d : cfg.datasets) out.push_back({d.name, {d.score_min, d.score_max}});
  return out;
}

/// Something to score: an audio path plus the id used by precomputed features.
struct UtteranceRef {
  std::string wav_path;
  std::string sample_id;
  std::optional<std::string> listener_id;
  std::optional<std::string> dataset_id;
};

class Predictor {
 public:
  Predictor(RunConfig cfg, const std::vector<std::string>& listeners)
      : config_(std::move(cfg)),
        encoder_(make_encoder(config_)),
        head_(head_config(config_, encoder_dim(encoder_)), listeners, dataset_entries(config_), config_.train.seed + 1) {}

  const RunConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  PredictorHead& head() { return head_; }
  const PredictorHead& head() const { return head_; }
  std::optional<Datastore>& datastore() { return datastore_; }
  const std::optional<Datastore>& datastore() const { return datastore_; }

  bool uses_audio() const { return std::holds_alternative<ToySpectralEncoder>(encoder_); }

  /// Parameter stores in a fixed order (encoder first, then head).
  std::vector<ParamStore*> param_stores() {
    std::vector<ParamStore*> out;
    if (auto* t = std::get_if<ToySpectralEncoder>(&encoder_)) out.push_back(&t->params);
    out.push_back(&head_.params);
    return out;
  }
  std::vector<const ParamStore*> param_stores() const {
    std::vector<const ParamStore*> out;
    if (const auto* t = std::get_if<ToySpectralEncoder>(&encoder_)) out.push_back(&t->params);
    out.push_back(&head_.params);
    return out;
  }

  Waveform load_audio(const std::string& path) const {
    return load_and_resample(path, config_.audio.target_rate, config_.audio.resampler);
  }

  FrameFeatures features(const Waveform& wave) const {
    const auto* t = std::get_if<ToySpectralEncoder>(&encoder_);
    if (!t) throw std::invalid_argument("precomputed encoder needs a sample_id, not a waveform");
    return t->encode(wave);
  }

  FrameFeatures features(const UtteranceRef& u) const {
    if (const auto* p = std::get_if<PrecomputedEncoder>(&encoder_)) return p->encode(u.sample_id);
    return features(load_audio(u.wav_path));
  }

  /// Parametric prediction fused with the kNN estimate when a datastore is loaded.
  ScorePrediction predict(const FrameFeatures& f, const std::optional<std::string>& listener_id = std::nullopt,
                          const std::optional<std::string>& dataset_id = std::nullopt) const {
    ScorePrediction p = head_.predict(f, listener_id, dataset_id);
    if (datastore_ && config_.knn.enabled && datastore_->size() > 0) {
      const auto& fc = config_.knn.fusion;
      const int k = std::min<int>(fc.k, static_cast<int>(datastore_->size()));
      const auto r = knn_query(*datastore_, pooled_key(f), k, fc.temperature);
      p.utterance_score = fuse(p.utterance_score, r.score, fc.lambda);
    }
    return p;
  }

  ScorePrediction predict(const UtteranceRef& u) const { return predict(features(u), u.listener_id, u.dataset_id); }

  ScorePrediction predict_wave(const Waveform& w) const { return predict(features(w)); }

 private:
  RunConfig config_;
  Encoder encoder_;
  PredictorHead head_;
  std::optional<Datastore> datastore_;
};

/// range_clip(time_pool(decode_frames(encode(wave)))) without kNN fusion.
inline ScorePrediction predict_utterance(const PredictorHead& head, const ToySpectralEncoder& backend, const Waveform& wave,
                                         const std::optional<std::string>& listener_id = std::nullopt,
                                         const std::optional<std::string>& dataset_id = std::nullopt) {
  return head.predict(backend.encode(wave), listener_id, dataset_id);
}

// --- datastore construction ------------------------------------------------

/// One entry per distinct sample: key = time-mean encoder features,
/// value = listener-averaged score.
inline Datastore build_datastore(const Predictor& pred, const std::vector<RatedUtterance>& train_rows) {
  if (train_rows.empty()) throw std::invalid_argument("build_datastore: empty training set");
  Datastore store;
  for (const auto& r : aggregate_by_listener(train_rows)) {
    const auto f = pred.features(UtteranceRef{r.wav_path, r.sample_id, std::nullopt, r.dataset_id});
    store.add(pooled_key(f), r.score, r.sample_id);
  }
  return store;
}

// --- checkpoint I/O ----------------------------------------------------------

inline std::string serialize_checkpoint(const Predictor& p) {
  bin::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.str(to_yaml(p.config()));
  const auto& listeners = p.head().listeners();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(listeners.size()));
  for (const auto& l : listeners) w.str(l);
  const auto& ds = p.head().datasets();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  for (const auto& d : ds) {
    w.str(d.name);
    w.put<double>(d.range.lo);
    w.put<double>(d.range.hi);
  }
  std::uint32_t n = 0;
  for (const auto* s : p.param_stores()) n += static_cast<std::uint32_t>(s->size());
  w.put<std::uint32_t>(n);
  for (const auto* s : p.param_stores())
    for (const auto& [name, t] : *s) {
      w.str(name);
      w.put<std::uint8_t>(t.trainable ? 1 : 0);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.put<std::uint64_t>(d);
      w.put<std::uint8_t>(1);
      for (double v : t.data) w.put<double>(v);
    }
  return w.buffer();
}

inline Predictor deserialize_checkpoint(std::string_view data, const std::string& origin) {
  bin::Reader r(data, origin);
  if (r.bytes(8) != std::string_view(kCheckpointMagic, 8)) throw FormatError(origin + ": not a checkpoint archive");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  RunConfig cfg = parse_config(r.str());
  std::vector<std::string> listeners(r.get<std::uint32_t>());
  for (auto& l : listeners) l = r.str();
  const auto n_ds = r.get<std::uint32_t>();
  if (n_ds != cfg.datasets.size()) throw FormatError(origin + ": dataset table does not match config");
  for (std::uint32_t i = 0; i < n_ds; ++i) {
    const auto name = r.str();
    const double lo = r.get<double>(), hi = r.get<double>();
    if (name != cfg.datasets[i].name || lo != cfg.datasets[i].score_min || hi != cfg.datasets[i].score_max)
      throw FormatError(origin + ": dataset table does not match config");
  }
  Predictor p(std::move(cfg), listeners);
  if (p.head().listeners() != listeners) throw FormatError(origin + ": listener table mismatch");

  const auto n = r.get<std::uint32_t>();
  std::size_t expected = 0;
  for (const auto* s : p.param_stores()) expected += s->size();
  if (n != expected)
    throw FormatError(origin + ": archive holds " + std::to_string(n) + " tensors, model needs " + std::to_string(expected));
  auto stores = p.param_stores();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name = r.str();
    const bool trainable = r.get<std::uint8_t>() != 0;
    std::vector<std::size_t> shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const auto dtype = r.get<std::uint8_t>();
    Tensor* target = nullptr;
    for (auto* s : stores)
      if (s->contains(name)) target = &s->at(name);
    if (!target) throw FormatError(origin + ": unexpected tensor '" + name + "'");
    if (target->shape != shape) throw FormatError(origin + ": shape mismatch for tensor '" + name + "'");
    target->trainable = trainable;
    for (auto& v : target->data) {
      if (dtype == 1) v = r.get<double>();
      else if (dtype == 0) v = r.get<float>();
      else throw FormatError(origin + ": unknown dtype for tensor '" + name + "'");
    }
  }
  if (r.remaining() != 0) throw FormatError(origin + ": trailing bytes");
  return p;
}

inline void save_checkpoint(const Predictor& p, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << serialize_checkpoint(p);
    if (!out) throw IoError("write failed for " + path);
  }
  if (p.datastore()) p.datastore()->save(path + ".knn");
}

inline Predictor load_checkpoint(const std::string& path) {
  Predictor p = deserialize_checkpoint(csv::read_file(path), path);
  if (std::filesystem::exists(path + ".knn.keys.feat")) p.datastore() = Datastore::load(path + ".knn");
  return p;
}

/// Parameter-wise arithmetic mean of checkpoints with identical layout.
inline Predictor average_checkpoints(const std::vector<Predictor>& models) {
  if (models.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints");
  Predictor out = models.front();
  auto dst = out.param_stores();
  for (std::size_t m = 1; m < models.size(); ++m) {
    const auto src = models[m].param_stores();
    if (src.size() != dst.size()) throw std::invalid_argument("average_checkpoints: shape mismatch");
    for (std::size_t s = 0; s < src.size(); ++s) {
      if (!dst[s]->same_layout(*src[s])) throw std::invalid_argument("average_checkpoints: shape mismatch");
      auto d_it = dst[s]->begin();
      for (auto s_it = src[s]->begin(); s_it != src[s]->end(); ++s_it, ++d_it) d_it->second.vec() += s_it->second.vec();
    }
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (auto* s : dst)
    for (auto& [n, t] : *s) t.vec() *= inv;
  return out;
}

}  // namespace sheet
