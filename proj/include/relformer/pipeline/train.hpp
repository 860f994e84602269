#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relformer/pipeline/checkpoint.hpp"
#include "relformer/pipeline/run_config.hpp"

namespace relformer::pipeline {

struct LossRecord {
  std::uint64_t step = 0;   // 1-based, continues across resumes
  std::uint64_t epoch = 0;  // 0-based epoch the step belongs to
  float loss = 0.0f;
  double l_dx = 0.0;
  double l_rot = 0.0;
  float s_dx = 0.0f;
  float s_rot = 0.0f;
};

std::string LossCsvHeader();
std::string LossCsvLine(const LossRecord& r);

struct TrainOptions {
  std::string out_dir;
  std::string resume;  // checkpoint path; empty starts fresh
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::string checkpoint_path;
  std::string log_path;
  std::vector<LossRecord> log;  // steps run by this call
};

// Writes <out>/loss.csv (appended on resume), <out>/checkpoint_epoch_NNNN.ckpt
// every `checkpoint_every` epochs and <out>/final.ckpt. Throws NumericError on
// a non-finite loss or gradient, naming the step, learning rate and per-group
// gradient norms.
TrainResult Train(const RunConfig& config, const TrainOptions& options);

}  // namespace relformer::pipeline
