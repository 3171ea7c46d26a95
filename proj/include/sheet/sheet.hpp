#pragma once

#include "sheet/audio.hpp"
#include "sheet/config.hpp"
#include "sheet/encoder.hpp"
#include "sheet/knn_retrieval.hpp"
#include "sheet/losses.hpp"
#include "sheet/manifest.hpp"
#include "sheet/metrics.hpp"
#include "sheet/optimizer.hpp"
#include "sheet/pipeline.hpp"
#include "sheet/predictor.hpp"
#include "sheet/registry.hpp"
#include "sheet/ssqa_model.hpp"
#include "sheet/synth.hpp"
#include "sheet/trainer.hpp"
