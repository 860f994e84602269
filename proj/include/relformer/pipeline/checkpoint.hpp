#pragma once

// Checkpoint file:
//   "RFCK" | u32 version | u64 header length | JSON header | payload
// The header holds the model config, its hash, the dataset hash, counters,
// optimizer settings, the training RNG state and the parameter table (name,
// shape). The payload is every parameter, then Adam's first and second
// moments, as little-endian float32 in table order.

#include <cstdint>
#include <string>
#include <vector>

#include "relformer/diff/adam.hpp"
#include "relformer/model/relformer.hpp"
#include "relformer/objective.hpp"

namespace relformer::pipeline {

struct Checkpoint {
  model::ModelConfig model;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  bool augment = false;
  double rescale = 1.0;
  diff::AdamConfig adam;
  std::uint64_t adam_step = 0;
  std::string rng_state;

  std::vector<std::string> names;
  std::vector<diff::Shape> shapes;
  std::vector<std::vector<float>> values;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt);
// Throws IoError for malformed files and ConfigError when the stored hash
// does not match the stored config.
Checkpoint LoadCheckpoint(const std::string& path);

// Copies parameter values and optimizer moments into `ckpt`.
void CaptureParameters(const diff::ParameterList<float>& params, const diff::AdamState<float>& adam, Checkpoint& ckpt);
// Restores by name. Throws ConfigError when names or shapes disagree.
void RestoreParameters(const Checkpoint& ckpt, diff::ParameterList<float>& params, diff::AdamState<float>* adam);

// Model plus learned loss weights, ready for inference.
struct TrainedModel {
  Checkpoint meta;
  model::RelformerModel<float> model;
  objective::LossParams<float> loss;

  diff::ParameterList<float> Parameters() const;
};

TrainedModel LoadTrainedModel(const std::string& path);

}  // namespace relformer::pipeline
