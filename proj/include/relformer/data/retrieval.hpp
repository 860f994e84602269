#pragma once

// Global descriptors, cosine nearest-neighbour retrieval and pair pools.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "relformer/data/scene.hpp"
#include "relformer/model/relformer.hpp"

namespace relformer::data {

using Descriptor = std::vector<double>;

// Unit-norm descriptors keyed by view id. Ids need not be contiguous.
class DescriptorIndex {
 public:
  DescriptorIndex() = default;
  explicit DescriptorIndex(std::size_t dim) : dim_(dim) {}

  // Normalizes `d`; throws DegenerateInput for a zero vector and ShapeError
  // for a dimension mismatch.
  void Add(std::size_t id, std::span<const double> d);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  std::size_t id(std::size_t i) const { return ids_[i]; }
  std::span<const double> descriptor(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  // Position of `id`, or nullopt.
  std::optional<std::size_t> Find(std::size_t id) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::size_t> ids_;
  std::vector<double> data_;
};

// Scaled to unit L2 norm; throws DegenerateInput for a zero vector.
Descriptor Normalized(std::span<const double> d);

double CosineSimilarity(std::span<const double> a, std::span<const double> b);

// Global average pool of the final backbone stage, L2 normalized. Images are
// processed in batches under NoGradGuard.
std::vector<Descriptor> GlobalDescriptors(const std::vector<Image>& images, const model::Backbone<float>& backbone,
                                          std::size_t batch = 16);

struct Neighbor {
  std::size_t id = 0;
  double similarity = 0.0;
};

// The k most similar entries by cosine similarity, most similar first, ties
// broken by lower id. `exclude` (usually the query's own id) is skipped.
std::vector<Neighbor> KNearest(std::span<const double> query, const DescriptorIndex& index, std::size_t k,
                               std::optional<std::size_t> exclude = std::nullopt);

// Argmax of cosine similarity with the lowest id winning ties. Throws
// InvalidInput when the index (after exclusion) is empty.
std::size_t NearestNeighbor(std::span<const double> query, const DescriptorIndex& index,
                            std::optional<std::size_t> exclude = std::nullopt);

struct PairRecord {
  std::size_t query_id = 0;
  std::size_t ref_id = 0;
  geometry::RelativePose relative;  // from the reference to the query
  Pose reference;
};

// For every indexed view, its k nearest other views form its reference pool.
// `poses[id]` is the pose of view id. Throws InvalidInput for k = 0 or fewer
// than k + 1 views.
std::vector<PairRecord> BuildPairs(const std::vector<Pose>& poses, const DescriptorIndex& index, std::size_t k);

PairRecord MakePair(const std::vector<Pose>& poses, std::size_t query_id, std::size_t ref_id);

}  // namespace relformer::data
