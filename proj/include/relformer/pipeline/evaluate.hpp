#pragma once

#include <string>
#include <vector>

#include "relformer/data/dataset.hpp"
#include "relformer/pipeline/checkpoint.hpp"
#include "relformer/pipeline/run_config.hpp"

namespace relformer::pipeline {

// Odd n: the middle of the sorted values. Even n: the mean of the two middle
// values. Throws InvalidInput when empty.
double Median(std::vector<double> values);

struct QueryError {
  std::size_t scene = 0;
  std::size_t query = 0;
  std::size_t ref = 0;
  double position_error = 0.0;  // m
  double rotation_error = 0.0;  // deg
};

struct SceneSummary {
  std::size_t scene = 0;
  std::size_t queries = 0;
  double median_position = 0.0;
  double median_rotation = 0.0;
};

struct EvalReport {
  std::vector<QueryError> rows;
  std::vector<SceneSummary> scenes;
  double mean_median_position = 0.0;  // average of the per-scene medians
  double mean_median_rotation = 0.0;
};

// Per-scene medians and their averages from the raw rows.
void Summarize(EvalReport& report);

// split = scenes: queries and their nearest-descriptor references come from
// each listed scene, divided per eval.database_views. split = train_pairs:
// the training config's (query, first pool entry) pairs. The predicted relative pose is
// decoded per rotation kind and composed with the reference pose.
// `trained` may be null for the oracle and identity predictors.
EvalReport Evaluate(const RunConfig& config, const TrainedModel* trained);

// Throws ConfigError when the run's model config (if given) or the dataset do
// not match the checkpoint.
void CheckCompatible(const TrainedModel& trained, const RunConfig& config, const data::Manifest& manifest);

// errors.csv (raw per query) and summary.csv (per scene plus the average).
void WriteEvalReport(const EvalReport& report, const std::string& out_dir);
std::string FormatSummaryTable(const EvalReport& report);

struct LocalizeResult {
  std::size_t ref = 0;
  double similarity = 0.0;
  geometry::Pose pose;
};

// Retrieval, relative pose prediction and recovery against one database
// (views with poses and descriptors). Throws InvalidInput for an empty
// database.
LocalizeResult Localize(const TrainedModel& trained, const model::Backbone<float>& descriptor_backbone,
                        const data::SceneData& database, const data::Image& query);

}  // namespace relformer::pipeline
