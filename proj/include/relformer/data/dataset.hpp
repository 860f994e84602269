#pragma once

// Dataset generation and loading.
//
// Layout under the output directory:
//   manifest.json            seeds, counts, descriptor backbone, generation config
//   scene_XXX/poses.csv
//   scene_XXX/pairs.csv      k reference candidates per query
//   scene_XXX/descriptors.rft  [views, D] float64, unit rows
//   scene_XXX/images/NNNNNN.rft  [H, W, 3] float32

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "relformer/data/retrieval.hpp"
#include "relformer/data/scene.hpp"
#include "relformer/data/storage.hpp"
#include "relformer/model/config.hpp"

namespace relformer::data {

struct GenConfig {
  std::uint64_t seed = 1;
  std::size_t scenes = 4;
  std::size_t views_per_scene = 200;
  std::size_t image_size = 64;
  std::size_t k = 10;  // reference pool size per query
  SceneParams scene;
  TrajectoryParams trajectory;
  RenderParams render;

  void Validate() const;  // throws ConfigError
};

nlohmann::json ToJson(const GenConfig& config);
// Strict: unknown keys throw ConfigError. Validates.
GenConfig GenConfigFromJson(const nlohmann::json& j);

// Backbone used for retrieval descriptors: the desk backbone layout at the
// dataset's image size.
model::BackboneConfig DescriptorBackboneConfig(std::size_t image_size);

struct SceneEntry {
  std::size_t id = 0;
  std::string dir;  // relative to the dataset root
  std::uint64_t scene_seed = 0;
  std::uint64_t trajectory_seed = 0;
  std::size_t views = 0;
  std::size_t pairs = 0;
};

struct Manifest {
  std::string root;
  std::uint64_t seed = 0;
  std::size_t image_size = 0;
  std::size_t k = 0;
  std::uint64_t descriptor_seed = 0;
  std::vector<SceneEntry> scenes;
  GenConfig config;
  std::uint64_t hash = 0;  // of the manifest text

  const SceneEntry& Scene(std::size_t id) const;
};

// Validates the config before anything is written. Views whose render is
// empty trigger a fresh trajectory for that scene.
Manifest GenerateDataset(const GenConfig& config, const std::string& out_dir);

Manifest LoadManifest(const std::string& root);

struct SceneData {
  std::size_t id = 0;
  std::vector<Pose> poses;
  std::vector<Image> images;
  DescriptorIndex index;
  std::vector<IdPair> pairs;

  // Reference pool of a query, in stored (most similar first) order.
  std::vector<std::size_t> Pool(std::size_t query_id) const;
};

SceneData LoadScene(const Manifest& manifest, std::size_t scene_id);

model::Backbone<float> DescriptorBackbone(const Manifest& manifest);

// Renders one scene in memory (no disk IO). Used by generation and tests.
struct GeneratedScene {
  Scene scene;
  std::uint64_t trajectory_seed = 0;
  std::vector<Pose> poses;
  std::vector<Image> images;
};
GeneratedScene GenerateSceneViews(const GenConfig& config, std::size_t scene_id);

}  // namespace relformer::data
