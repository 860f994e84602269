#pragma once

#include <functional>
#include <string>
#include <vector>

#include "relformer/pipeline/evaluate.hpp"
#include "relformer/pipeline/run_config.hpp"

namespace relformer::pipeline {

struct AblateRow {
  std::uint64_t seed = 0;
  model::AggregatorKind aggregator = model::AggregatorKind::kTransformer;
  model::RotationKind rotation = model::RotationKind::kSixD;
  std::uint64_t steps = 0;
  double final_loss = 0.0;
  double median_position = 0.0;  // averages of the per-scene medians
  double median_rotation = 0.0;
  double identity_position = 0.0;
  double identity_rotation = 0.0;
};

std::string AblateCsvHeader();
std::string AblateCsvLine(const AblateRow& row);

// Trains and evaluates every seed x aggregator x rotation combination of
// config.ablate, each in <out>/<agg>_<rot>_seed<N>, and writes the merged
// <out>/ablate.csv. The identity predictor on the same queries gives the
// reference columns.
std::vector<AblateRow> Ablate(const RunConfig& config, const std::function<void(const std::string&)>& progress = {});

}  // namespace relformer::pipeline
