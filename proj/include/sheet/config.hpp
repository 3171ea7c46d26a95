#pragma once

// Run configuration: one YAML file per run. Unknown keys are errors.
// Relative paths are resolved against the config file's directory.

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "sheet/audio.hpp"
#include "sheet/common.hpp"
#include "sheet/early_stopping.hpp"
#include "sheet/encoder.hpp"
#include "sheet/knn_retrieval.hpp"
#include "sheet/losses.hpp"
#include "sheet/manifest.hpp"
#include "sheet/ssqa_model.hpp"

namespace sheet {

struct AudioConfig {
  int target_rate = 16000;
  double max_duration = 0.0;  // seconds; 0 disables training-time cropping
  int num_workers = 2;
  ResamplerConfig resampler;
};

struct EncoderConfig {
  std::string backend = "toy-spectral";  // or "precomputed"
  ToySpectralConfig toy;
  PrecomputedConfig precomputed;
};

struct ModelConfig {
  int decoder_hidden = 256;
  std::string activation = "relu";
  bool clip = true;
  bool listener_modeling = false;
  int listener_emb_dim = 32;
  bool strict_listeners = false;
  double mean_listener_prob = 0.5;
  bool multi_dataset = false;
};

struct KnnConfig {
  bool enabled = false;
  bool tune_lambda = false;  // grid-search lambda on the dev set after training
  FusionConfig fusion;
};

struct RunConfig {
  std::string run_name = "run";
  std::string output_dir = "exp";
  std::vector<DatasetSpec> datasets;
  AudioConfig audio;
  EncoderConfig encoder;
  ModelConfig model;
  LossConfig loss;
  KnnConfig knn;
  TrainConfig train;

  void validate() const {
    if (datasets.empty()) throw ConfigError("config: at least one entry under 'datasets' is required");
    std::set<std::string> names;
    for (const auto& d : datasets) {
      d.validate();
      if (!names.insert(d.name).second) throw ConfigError("config: duplicate dataset name '" + d.name + "'");
    }
    if (audio.target_rate <= 0) throw ConfigError("audio.target_rate must be > 0");
    if (audio.num_workers < 1) throw ConfigError("audio.num_workers must be >= 1");
    if (encoder.backend != "toy-spectral" && encoder.backend != "precomputed")
      throw ConfigError("encoder.backend must be 'toy-spectral' or 'precomputed'");
    if (model.decoder_hidden < 0) throw ConfigError("model.decoder_hidden must be >= 0");
    parse_activation(model.activation);
    if (model.mean_listener_prob < 0 || model.mean_listener_prob > 1)
      throw ConfigError("model.mean_listener_prob must lie in [0, 1]");
    loss.validate();
    knn.fusion.validate();
    train.validate();
  }

  const DatasetSpec& primary_dataset() const { return datasets.front(); }
};

namespace detail {

/// Typed, key-tracking view over a YAML mapping.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError("config: '" + label() + "' must be a mapping");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v || v.IsNull()) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config: bad value for '" + prefix() + key + "'");
    }
  }

  Section sub(const char* key) {
    used_.insert(key);
    YAML::Node v = (node_ && node_.IsMap()) ? node_[key] : YAML::Node();
    return Section(v, prefix() + key);
  }

  YAML::Node raw(const char* key) {
    used_.insert(key);
    return (node_ && node_.IsMap()) ? node_[key] : YAML::Node();
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!used_.count(k)) throw ConfigError("config: unknown key '" + prefix() + k + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  std::string prefix() const { return path_.empty() ? "" : path_ + "."; }
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return p;
  std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

/// Parses YAML text. `base_dir` anchors relative paths (empty: leave as is).
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  RunConfig c;
  detail::Section top(root, "");
  top.get("run_name", c.run_name);
  top.get("output_dir", c.output_dir);

  YAML::Node ds = top.raw("datasets");
  if (ds && !ds.IsNull()) {
    if (!ds.IsSequence()) throw ConfigError("config: 'datasets' must be a list");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      detail::Section s(ds[i], "datasets[" + std::to_string(i) + "]");
      DatasetSpec d;
      s.get("name", d.name);
      s.get("train", d.train_manifest);
      s.get("dev", d.dev_manifest);
      s.get("test", d.test_manifests);
      s.get("score_min", d.score_min);
      s.get("score_max", d.score_max);
      s.get("sampling_frequency", d.sampling_frequency);
      s.get("has_listener_ids", d.has_listener_ids);
      s.finish();
      d.train_manifest = detail::resolve(d.train_manifest, base_dir);
      d.dev_manifest = detail::resolve(d.dev_manifest, base_dir);
      for (auto& t : d.test_manifests) t = detail::resolve(t, base_dir);
      c.datasets.push_back(std::move(d));
    }
  }

  {
    auto a = top.sub("audio");
    a.get("target_rate", c.audio.target_rate);
    a.get("max_duration", c.audio.max_duration);
    a.get("num_workers", c.audio.num_workers);
    auto r = a.sub("resampler");
    r.get("half_width", c.audio.resampler.half_width);
    r.get("rolloff", c.audio.resampler.rolloff);
    r.get("kaiser_beta", c.audio.resampler.kaiser_beta);
    r.finish();
    a.finish();
  }
  {
    auto e = top.sub("encoder");
    auto& t = c.encoder.toy;
    auto& p = c.encoder.precomputed;
    e.get("backend", c.encoder.backend);
    e.get("n_fft", t.spectral.n_fft);
    e.get("hop", t.spectral.hop);
    e.get("n_mels", t.spectral.n_mels);
    e.get("f_min", t.spectral.f_min);
    e.get("f_max", t.spectral.f_max);
    e.get("conv_layers", t.conv_layers);
    e.get("channels", t.channels);
    e.get("kernel_size", t.kernel_size);
    e.get("trainable", t.trainable);
    std::string layer = "last";
    e.get("layer_select", layer);
    t.layer_select = p.layer_select = layer;
    e.get("feature_dir", p.feature_dir);
    e.get("dim", p.dim);
    e.get("frame_rate", p.frame_rate);
    e.finish();
    p.feature_dir = detail::resolve(p.feature_dir, base_dir);
    t.spectral.sample_rate = c.audio.target_rate;
  }
  {
    auto m = top.sub("model");
    m.get("decoder_hidden", c.model.decoder_hidden);
    m.get("activation", c.model.activation);
    m.get("clip", c.model.clip);
    m.get("listener_modeling", c.model.listener_modeling);
    m.get("listener_emb_dim", c.model.listener_emb_dim);
    m.get("strict_listeners", c.model.strict_listeners);
    m.get("mean_listener_prob", c.model.mean_listener_prob);
    m.get("multi_dataset", c.model.multi_dataset);
    m.finish();
  }
  {
    auto l = top.sub("loss");
    l.get("use_clipped", c.loss.use_clipped);
    l.get("tau", c.loss.tau);
    l.get("use_contrastive", c.loss.use_contrastive);
    l.get("alpha", c.loss.alpha);
    l.get("contrastive_weight", c.loss.contrastive_weight);
    l.finish();
  }
  {
    auto k = top.sub("knn");
    k.get("enabled", c.knn.enabled);
    k.get("tune_lambda", c.knn.tune_lambda);
    k.get("k", c.knn.fusion.k);
    k.get("temperature", c.knn.fusion.temperature);
    k.get("lambda", c.knn.fusion.lambda);
    k.finish();
  }
  {
    auto t = top.sub("train");
    t.get("batch_size", c.train.batch_size);
    t.get("lr", c.train.lr);
    t.get("momentum", c.train.momentum);
    t.get("max_steps", c.train.max_steps);
    t.get("patience_steps", c.train.patience_steps);
    t.get("keep_best", c.train.keep_best);
    std::string sel = to_string(c.train.selection_metric);
    t.get("selection_metric", sel);
    c.train.selection_metric = parse_selection_metric(sel);
    t.get("val_interval", c.train.val_interval);
    t.get("seed", c.train.seed);
    t.get("training_rows", c.train.training_rows);
    t.get("log_interval", c.train.log_interval);
    t.get("visualize", c.train.visualize);
    t.finish();
  }
  top.finish();
  c.output_dir = detail::resolve(c.output_dir, base_dir);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path);
  const std::string text = csv::read_file(path);
  return parse_config(text, std::filesystem::absolute(path).parent_path());
}

/// Emits a config that parse_config() reads back to an equal value.
inline std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "run_name" << YAML::Value << c.run_name;
  e << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  e << YAML::Key << "datasets" << YAML::Value << YAML::BeginSeq;
  for (const auto& d : c.datasets) {
    e << YAML::BeginMap;
    e << YAML::Key << "name" << YAML::Value << d.name;
    e << YAML::Key << "train" << YAML::Value << d.train_manifest;
    e << YAML::Key << "dev" << YAML::Value << d.dev_manifest;
    e << YAML::Key << "test" << YAML::Value << YAML::Flow << d.test_manifests;
    e << YAML::Key << "score_min" << YAML::Value << d.score_min;
    e << YAML::Key << "score_max" << YAML::Value << d.score_max;
    e << YAML::Key << "sampling_frequency" << YAML::Value << d.sampling_frequency;
    e << YAML::Key << "has_listener_ids" << YAML::Value << d.has_listener_ids;
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;
  e << YAML::Key << "audio" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "target_rate" << YAML::Value << c.audio.target_rate;
  e << YAML::Key << "max_duration" << YAML::Value << c.audio.max_duration;
  e << YAML::Key << "num_workers" << YAML::Value << c.audio.num_workers;
  e << YAML::Key << "resampler" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "half_width" << YAML::Value << c.audio.resampler.half_width;
  e << YAML::Key << "rolloff" << YAML::Value << c.audio.resampler.rolloff;
  e << YAML::Key << "kaiser_beta" << YAML::Value << c.audio.resampler.kaiser_beta;
  e << YAML::EndMap << YAML::EndMap;
  const auto& t = c.encoder.toy;
  const auto& p = c.encoder.precomputed;
  e << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "backend" << YAML::Value << c.encoder.backend;
  e << YAML::Key << "n_fft" << YAML::Value << t.spectral.n_fft;
  e << YAML::Key << "hop" << YAML::Value << t.spectral.hop;
  e << YAML::Key << "n_mels" << YAML::Value << t.spectral.n_mels;
  e << YAML::Key << "f_min" << YAML::Value << t.spectral.f_min;
  e << YAML::Key << "f_max" << YAML::Value << t.spectral.f_max;
  e << YAML::Key << "conv_layers" << YAML::Value << t.conv_layers;
  e << YAML::Key << "channels" << YAML::Value << t.channels;
  e << YAML::Key << "kernel_size" << YAML::Value << t.kernel_size;
  e << YAML::Key << "trainable" << YAML::Value << t.trainable;
  e << YAML::Key << "layer_select" << YAML::Value << t.layer_select;
  e << YAML::Key << "feature_dir" << YAML::Value << p.feature_dir;
  e << YAML::Key << "dim" << YAML::Value << p.dim;
  e << YAML::Key << "frame_rate" << YAML::Value << p.frame_rate;
  e << YAML::EndMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "decoder_hidden" << YAML::Value << c.model.decoder_hidden;
  e << YAML::Key << "activation" << YAML::Value << c.model.activation;
  e << YAML::Key << "clip" << YAML::Value << c.model.clip;
  e << YAML::Key << "listener_modeling" << YAML::Value << c.model.listener_modeling;
  e << YAML::Key << "listener_emb_dim" << YAML::Value << c.model.listener_emb_dim;
  e << YAML::Key << "strict_listeners" << YAML::Value << c.model.strict_listeners;
  e << YAML::Key << "mean_listener_prob" << YAML::Value << c.model.mean_listener_prob;
  e << YAML::Key << "multi_dataset" << YAML::Value << c.model.multi_dataset;
  e << YAML::EndMap;
  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "use_clipped" << YAML::Value << c.loss.use_clipped;
  e << YAML::Key << "tau" << YAML::Value << c.loss.tau;
  e << YAML::Key << "use_contrastive" << YAML::Value << c.loss.use_contrastive;
  e << YAML::Key << "alpha" << YAML::Value << c.loss.alpha;
  e << YAML::Key << "contrastive_weight" << YAML::Value << c.loss.contrastive_weight;
  e << YAML::EndMap;
  e << YAML::Key << "knn" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "enabled" << YAML::Value << c.knn.enabled;
  e << YAML::Key << "tune_lambda" << YAML::Value << c.knn.tune_lambda;
  e << YAML::Key << "k" << YAML::Value << c.knn.fusion.k;
  e << YAML::Key << "temperature" << YAML::Value << c.knn.fusion.temperature;
  e << YAML::Key << "lambda" << YAML::Value << c.knn.fusion.lambda;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  e << YAML::Key << "lr" << YAML::Value << c.train.lr;
  e << YAML::Key << "momentum" << YAML::Value << c.train.momentum;
  e << YAML::Key << "max_steps" << YAML::Value << c.train.max_steps;
  e << YAML::Key << "patience_steps" << YAML::Value << c.train.patience_steps;
  e << YAML::Key << "keep_best" << YAML::Value << c.train.keep_best;
  e << YAML::Key << "selection_metric" << YAML::Value << to_string(c.train.selection_metric);
  e << YAML::Key << "val_interval" << YAML::Value << c.train.val_interval;
  e << YAML::Key << "seed" << YAML::Value << c.train.seed;
  e << YAML::Key << "training_rows" << YAML::Value << c.train.training_rows;
  e << YAML::Key << "log_interval" << YAML::Value << c.train.log_interval;
  e << YAML::Key << "visualize" << YAML::Value << c.train.visualize;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace sheet
