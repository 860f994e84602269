#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "relformer/data/dataset.hpp"
#include "relformer/diff/tensor.hpp"
#include "relformer/objective.hpp"
#include "relformer/pipeline/run_config.hpp"

namespace relformer::pipeline {

// One query and its reference pool. At train time a reference is drawn from
// the pool for every visit.
struct Sample {
  std::size_t scene = 0;  // position in TrainingData::scenes
  std::size_t query = 0;
  std::vector<std::size_t> pool;
};

struct TrainingData {
  data::Manifest manifest;
  std::vector<data::SceneData> scenes;
  std::vector<Sample> samples;
};

// Loads the configured scenes. With pair_limit > 0, a seeded draw picks that
// many fixed (query, reference) pairs; otherwise every query keeps its pool.
TrainingData LoadTrainingData(const TrainConfig& config, std::uint64_t seed);

struct Preprocess {
  bool augment = false;
  double rescale = 1.0;
};

// Train: rescale + random crop (+ the no-op jitter hook). Eval: rescale +
// center crop. Without augmentation the image passes through unchanged.
data::Image PrepareImage(const data::Image& image, std::size_t size, const Preprocess& p, std::mt19937_64* train_rng);

// [N, S, S, 3]; throws ShapeError on size mismatch.
diff::Tensor<float> StackImages(const std::vector<data::Image>& images);

// Ground truth for predicting `query` from `ref` within one scene.
objective::PoseTarget PairTarget(const data::SceneData& scene, std::size_t query, std::size_t ref, model::RotationKind kind);

}  // namespace relformer::pipeline
