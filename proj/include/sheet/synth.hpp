#pragma once

// Desk-scale synthetic corpus and the data-preparation stage.
//
// make_synth writes <out>/wav/*.wav, <out>/scores.csv (manifest columns, wav
// paths relative to <out>) and <out>/systems.csv (system_id, snr_db,
// base_score). System s has SNR rising linearly with s; its base score is a
// linear map of SNR onto [1.5, 4.5]. A listener's rating is
// clamp(base + listener_bias + N(0, listener_noise), 1, 5), with biases drawn
// from U[-0.4, 0.4].

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sheet/audio.hpp"
#include "sheet/common.hpp"
#include "sheet/csv.hpp"
#include "sheet/manifest.hpp"

namespace sheet {

struct SynthSpec {
  int n_systems = 8;
  int utts_per_system = 10;
  int listeners = 3;
  std::uint64_t seed = 1234;
  double listener_noise = 0.3;
  int sample_rate = 16000;
  double min_duration = 1.0;
  double max_duration = 2.0;
  double snr_min_db = -5.0;
  double snr_max_db = 30.0;

  void validate() const {
    if (n_systems < 1 || utts_per_system < 1 || listeners < 1)
      throw ConfigError("make-synth: n_systems, utts_per_system and listeners must be positive");
    if (sample_rate <= 0) throw ConfigError("make-synth: sample_rate must be positive");
    if (!(min_duration > 0) || max_duration < min_duration)
      throw ConfigError("make-synth: need 0 < min_duration <= max_duration");
    if (listener_noise < 0) throw ConfigError("make-synth: listener_noise must be >= 0");
  }
};

struct SynthSystem {
  std::string system_id;
  double snr_db = 0.0;
  double base_score = 0.0;
};

inline std::vector<SynthSystem> synth_systems(const SynthSpec& spec) {
  std::vector<SynthSystem> out;
  for (int s = 0; s < spec.n_systems; ++s) {
    const double frac = spec.n_systems > 1 ? static_cast<double>(s) / (spec.n_systems - 1) : 0.5;
    char id[32];
    std::snprintf(id, sizeof(id), "sys%02d", s);
    out.push_back({id, spec.snr_min_db + frac * (spec.snr_max_db - spec.snr_min_db), 1.5 + 3.0 * frac});
  }
  return out;
}

/// Harmonic tone with a slow amplitude envelope, RMS-normalised to 0.1, plus
/// white noise at the requested SNR.
inline Waveform synth_utterance(double snr_db, double seconds, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f0_dist(110.0, 240.0), phase(0.0, 2.0 * M_PI), am_rate(2.0, 5.0);
  const double f0 = f0_dist(rng), am = am_rate(rng), ph = phase(rng);
  const auto n = static_cast<std::size_t>(seconds * rate);
  Waveform w;
  w.rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    double v = 0.0;
    for (int h = 1; h <= 4 && h * f0 < rate / 2.0; ++h) v += std::sin(2.0 * M_PI * h * f0 * t + h * ph) / h;
    w.samples[i] = v * (0.6 + 0.4 * std::sin(2.0 * M_PI * am * t));
  }
  double rms = 0.0;
  for (double v : w.samples) rms += v * v;
  rms = std::sqrt(rms / static_cast<double>(std::max<std::size_t>(n, 1)));
  const double gain = rms > 0 ? 0.1 / rms : 0.0;
  const double noise_sd = 0.1 / std::pow(10.0, snr_db / 20.0);
  std::normal_distribution<double> noise(0.0, noise_sd);
  for (double& v : w.samples) v = std::clamp(v * gain + noise(rng), -1.0, 1.0);
  return w;
}

/// Generates the corpus; returns the score-list rows (wav paths relative to out_dir).
inline std::vector<RatedUtterance> make_synth(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "wav");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> bias_dist(-0.4, 0.4), dur_dist(spec.min_duration, spec.max_duration);
  std::vector<double> bias(static_cast<std::size_t>(spec.listeners));
  for (auto& b : bias) b = bias_dist(rng);
  std::normal_distribution<double> rating_noise(0.0, 1.0);

  const auto systems = synth_systems(spec);
  std::vector<csv::Row> sys_rows = {{"system_id", "snr_db", "base_score"}};
  for (const auto& s : systems)
    sys_rows.push_back({s.system_id, csv::format_double(s.snr_db), csv::format_double(s.base_score)});
  csv::write((fs::path(out_dir) / "systems.csv").string(), sys_rows);

  std::vector<RatedUtterance> rows;
  for (const auto& s : systems) {
    for (int u = 0; u < spec.utts_per_system; ++u) {
      char sid[64];
      std::snprintf(sid, sizeof(sid), "%s_utt%03d", s.system_id.c_str(), u);
      const std::string rel = "wav/" + std::string(sid) + ".wav";
      write_wav((fs::path(out_dir) / rel).string(), synth_utterance(s.snr_db, dur_dist(rng), spec.sample_rate, rng));
      for (int l = 0; l < spec.listeners; ++l) {
        char lid[32];
        std::snprintf(lid, sizeof(lid), "lis%02d", l);
        const double r = s.base_score + bias[static_cast<std::size_t>(l)] + spec.listener_noise * rating_noise(rng);
        rows.push_back({rel, sid, s.system_id, std::string(lid), std::clamp(r, 1.0, 5.0), "synth"});
      }
    }
  }
  write_manifest(rows, (fs::path(out_dir) / "scores.csv").string());
  return rows;
}

struct SplitSpec {
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct PreparedManifests {
  std::string train, dev, test;
};

/// Validates a score list, checks that every referenced wav exists, and
/// splits samples (all listener rows of a sample stay together) into
/// train/dev/test per system. Relative wav paths are resolved against
/// `audio_root` (default: the score list's directory) and written absolute.
inline PreparedManifests prepare(const std::string& score_list, const std::string& out_dir, const DatasetSpec& spec,
                                 const SplitSpec& split = {}, std::string audio_root = {}) {
  namespace fs = std::filesystem;
  if (!fs::exists(score_list)) throw IoError("score list not found: " + score_list);
  if (split.dev_fraction < 0 || split.test_fraction < 0 || split.dev_fraction + split.test_fraction >= 1)
    throw ConfigError("prepare: split fractions must be >= 0 and sum to < 1");
  auto rows = read_manifest(score_list, spec);
  if (audio_root.empty()) audio_root = fs::absolute(score_list).parent_path().string();

  std::string errors;
  std::size_t n_errors = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    fs::path p(rows[i].wav_path);
    if (p.is_relative()) p = fs::path(audio_root) / p;
    rows[i].wav_path = p.lexically_normal().string();
    if (!fs::exists(p)) {
      ++n_errors;
      errors += "\n  row " + std::to_string(i) + ": missing audio file " + rows[i].wav_path;
    }
  }
  if (n_errors) throw ValidationError(std::to_string(n_errors) + " row(s) reference missing audio:" + errors);

  // group sample ids by system, preserving first appearance
  std::map<std::string, std::vector<std::string>> by_system;
  std::map<std::string, bool> seen;
  for (const auto& r : rows)
    if (!seen[r.sample_id]) {
      seen[r.sample_id] = true;
      by_system[r.system_id.value_or("")].push_back(r.sample_id);
    }
  std::mt19937_64 rng(split.seed);
  std::map<std::string, int> assignment;  // 0 train, 1 dev, 2 test
  for (auto& [sys, ids] : by_system) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = ids.size();
    auto n_test = static_cast<std::size_t>(std::lround(split.test_fraction * static_cast<double>(n)));
    auto n_dev = static_cast<std::size_t>(std::lround(split.dev_fraction * static_cast<double>(n)));
    while (n_test + n_dev >= n && (n_test + n_dev) > 0) {
      if (n_dev >= n_test && n_dev > 0) --n_dev;
      else --n_test;
    }
    for (std::size_t i = 0; i < n; ++i) assignment[ids[i]] = i < n_test ? 2 : (i < n_test + n_dev ? 1 : 0);
  }
  std::vector<RatedUtterance> parts[3];
  for (const auto& r : rows) parts[assignment[r.sample_id]].push_back(r);

  fs::create_directories(out_dir);
  PreparedManifests out{(fs::path(out_dir) / "train.csv").string(), (fs::path(out_dir) / "dev.csv").string(),
                        (fs::path(out_dir) / "test.csv").string()};
  write_manifest(parts[0], out.train);
  write_manifest(parts[1], out.dev);
  write_manifest(parts[2], out.test);
  for (const auto* p : {&out.train, &out.dev, &out.test}) read_manifest(*p, spec);
  return out;
}

}  // namespace sheet
