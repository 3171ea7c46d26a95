#pragma once

#include <string>

#include "oracles.hpp"
#include "sheet/sheet.hpp"

namespace support {

/// Small toy-spectral run config over a prepared synth corpus in `dir`.
inline sheet::RunConfig toy_config(const std::string& dir, long max_steps = 20) {
  sheet::RunConfig c;
  c.output_dir = dir + "/exp";
  sheet::DatasetSpec d;
  d.name = "synth";
  d.train_manifest = dir + "/data/train.csv";
  d.dev_manifest = dir + "/data/dev.csv";
  d.test_manifests = {dir + "/data/test.csv"};
  c.datasets.push_back(d);
  c.train.max_steps = max_steps;
  c.train.val_interval = 10;
  c.train.visualize = false;
  c.audio.num_workers = 1;
  return c;
}

/// make-synth + prepare into dir/corpus and dir/data.
inline sheet::PreparedManifests synth_corpus(const std::string& dir, sheet::SynthSpec spec = {}) {
  sheet::make_synth(spec, dir + "/corpus");
  sheet::DatasetSpec ds;
  ds.name = "synth";
  return sheet::prepare(dir + "/corpus/scores.csv", dir + "/data", ds);
}

}  // namespace support
