#pragma once

// Run configuration shared by every subcommand. One JSON document with a
// top-level seed; each command reads the sections it needs. Unknown keys
// are rejected at every level.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relformer/data/dataset.hpp"
#include "relformer/model/config.hpp"

namespace relformer::pipeline {

struct TrainConfig {
  std::string dataset;
  std::vector<std::size_t> scenes;  // empty: every scene in the dataset
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::size_t max_steps = 0;        // 0: no limit
  std::size_t pair_limit = 0;       // > 0: a fixed set of this many (query, reference) pairs
  bool augment = true;              // random crops at train time, center crops at eval time
  double rescale = 1.14;
  std::size_t checkpoint_every = 10;  // epochs; 0: only the final checkpoint

  void Validate() const;
};

enum class EvalSplit { kScenes, kTrainPairs };
enum class Predictor { kModel, kOracle, kIdentity };

struct EvalConfig {
  std::string dataset;                // empty: the training dataset
  std::vector<std::size_t> scenes;    // empty: every scene
  EvalSplit split = EvalSplit::kScenes;
  Predictor predictor = Predictor::kModel;
  std::size_t batch_size = 16;
  // split = scenes: the first database_views views of a scene form the
  // retrieval database and the rest are queries. 0: every view is a query and
  // retrieves from all other views.
  std::size_t database_views = 0;

  void Validate() const;
};

struct AblateConfig {
  std::vector<model::AggregatorKind> aggregators{model::AggregatorKind::kTransformer, model::AggregatorKind::kConv,
                                                 model::AggregatorKind::kBaseline};
  std::vector<model::RotationKind> rotations{model::RotationKind::kQuaternion, model::RotationKind::kSixD,
                                             model::RotationKind::kNineD};
  std::vector<std::uint64_t> seeds{1};

  void Validate() const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  data::GenConfig gen;
  model::ModelConfig model = model::ModelConfig::DeskScale();
  bool model_given = false;  // the document had a "model" section
  TrainConfig train;
  EvalConfig eval;
  AblateConfig ablate;

  void Validate() const;
};

std::string ToString(EvalSplit split);
std::string ToString(Predictor predictor);
EvalSplit ParseEvalSplit(const std::string& s);
Predictor ParsePredictor(const std::string& s);

nlohmann::json ToJson(const RunConfig& config);
// Strict and validating. The gen section inherits the top-level seed unless
// it sets its own.
RunConfig RunConfigFromJson(const nlohmann::json& j);
RunConfig LoadRunConfig(const std::string& path);

// Parses "0,1,2" (and ranges like "0-2"); throws ConfigError.
std::vector<std::size_t> ParseSceneList(const std::string& s);

}  // namespace relformer::pipeline
