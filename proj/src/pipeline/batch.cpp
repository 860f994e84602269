#include "relformer/pipeline/batch.hpp"

#include <algorithm>
#include <numeric>

#include "relformer/seed.hpp"

namespace relformer::pipeline {

TrainingData LoadTrainingData(const TrainConfig& config, std::uint64_t seed) {
  if (config.dataset.empty()) throw ConfigError("train.dataset is required");
  TrainingData d;
  d.manifest = data::LoadManifest(config.dataset);
  std::vector<std::size_t> ids = config.scenes;
  if (ids.empty()) {
    for (const auto& s : d.manifest.scenes) ids.push_back(s.id);
  }
  for (std::size_t id : ids) d.scenes.push_back(data::LoadScene(d.manifest, id));

  for (std::size_t s = 0; s < d.scenes.size(); ++s) {
    for (std::size_t q = 0; q < d.scenes[s].poses.size(); ++q) {
      auto pool = d.scenes[s].Pool(q);
      if (!pool.empty()) d.samples.push_back({s, q, std::move(pool)});
    }
  }
  if (d.samples.empty()) throw ConfigError("train: the selected scenes contain no pairs");

  if (config.pair_limit > 0) {
    if (config.pair_limit > d.samples.size()) {
      throw ConfigError("train.pair_limit " + std::to_string(config.pair_limit) + " exceeds the " +
                        std::to_string(d.samples.size()) + " available queries");
    }
    std::mt19937_64 rng(DeriveSeed(seed, seed_stream::kPairs));
    std::vector<std::size_t> order(d.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(config.pair_limit);
    std::sort(order.begin(), order.end());
    std::vector<Sample> fixed;
    for (std::size_t i : order) {
      Sample s = d.samples[i];
      std::uniform_int_distribution<std::size_t> pick(0, s.pool.size() - 1);
      s.pool = {s.pool[pick(rng)]};
      fixed.push_back(std::move(s));
    }
    d.samples = std::move(fixed);
  }
  return d;
}

data::Image PrepareImage(const data::Image& image, std::size_t size, const Preprocess& p, std::mt19937_64* train_rng) {
  if (!p.augment) return image;
  if (train_rng) {
    data::Image out = data::RandomCrop(image, size, p.rescale, *train_rng);
    data::ColorJitter(out, *train_rng);
    return out;
  }
  return data::CenterCrop(image, size, p.rescale);
}

diff::Tensor<float> StackImages(const std::vector<data::Image>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty batch");
  const std::size_t h = images[0].height, w = images[0].width;
  std::vector<float> flat;
  flat.reserve(images.size() * h * w * 3);
  for (const auto& img : images) {
    if (img.height != h || img.width != w || img.size() != h * w * 3) throw ShapeError("stack_images: images differ in size");
    flat.insert(flat.end(), img.pixels.begin(), img.pixels.end());
  }
  return diff::Tensor<float>::FromData({images.size(), h, w, 3}, std::move(flat));
}

objective::PoseTarget PairTarget(const data::SceneData& scene, std::size_t query, std::size_t ref, model::RotationKind kind) {
  return objective::MakeTarget(scene.poses.at(ref), scene.poses.at(query), kind);
}

}  // namespace relformer::pipeline
