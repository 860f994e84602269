#include "relformer/data/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace relformer::data {

namespace {

// Higher similarity first, then lower id.
bool Better(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Descriptor Normalized(std::span<const double> d) {
  const double norm = std::sqrt(Dot(d, d));
  if (!(norm > 1e-300) || !std::isfinite(norm)) throw DegenerateInput("descriptor: cannot normalize a zero or non-finite vector");
  Descriptor out(d.begin(), d.end());
  for (double& v : out) v /= norm;
  return out;
}

double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimensions differ");
  const double na = std::sqrt(Dot(a, a)), nb = std::sqrt(Dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInput("cosine_similarity: zero vector");
  return std::clamp(Dot(a, b) / (na * nb), -1.0, 1.0);
}

void DescriptorIndex::Add(std::size_t id, std::span<const double> d) {
  if (d.size() != dim_) {
    throw ShapeError("descriptor_index: expected dimension " + std::to_string(dim_) + ", got " + std::to_string(d.size()));
  }
  if (Find(id)) throw InvalidInput("descriptor_index: duplicate id " + std::to_string(id));
  const Descriptor unit = Normalized(d);
  ids_.push_back(id);
  data_.insert(data_.end(), unit.begin(), unit.end());
}

std::optional<std::size_t> DescriptorIndex::Find(std::size_t id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::vector<Descriptor> GlobalDescriptors(const std::vector<Image>& images, const model::Backbone<float>& backbone,
                                          std::size_t batch) {
  const std::size_t s = backbone.config().image_size;
  const std::size_t c = backbone.config().in_channels;
  std::vector<Descriptor> out;
  out.reserve(images.size());
  diff::NoGradGuard no_grad;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t n = std::min(batch, images.size() - start);
    std::vector<float> data;
    data.reserve(n * s * s * c);
    for (std::size_t i = 0; i < n; ++i) {
      const Image& img = images[start + i];
      if (img.height != s || img.width != s || img.size() != s * s * c) {
        throw ShapeError("global_descriptor: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         ", backbone expects " + std::to_string(s) + "x" + std::to_string(s));
      }
      data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    const auto pooled = backbone.Pooled(diff::Tensor<float>::FromData({n, s, s, c}, std::move(data)));
    const std::size_t dim = pooled.dim(1);
    const auto v = pooled.data();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> d(v.begin() + static_cast<std::ptrdiff_t>(i * dim), v.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
      out.push_back(Normalized(d));
    }
  }
  return out;
}

std::vector<Neighbor> KNearest(std::span<const double> query, const DescriptorIndex& index, std::size_t k,
                               std::optional<std::size_t> exclude) {
  if (query.size() != index.dim()) throw ShapeError("k_nearest: query dimension differs from the index");
  const Descriptor q = Normalized(query);
  std::vector<Neighbor> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude && index.id(i) == *exclude) continue;
    all.push_back({index.id(i), std::clamp(Dot(q, index.descriptor(i)), -1.0, 1.0)});
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), Better);
  all.resize(keep);
  return all;
}

std::size_t NearestNeighbor(std::span<const double> query, const DescriptorIndex& index,
                            std::optional<std::size_t> exclude) {
  const auto best = KNearest(query, index, 1, exclude);
  if (best.empty()) throw InvalidInput("nearest_neighbor: the index is empty");
  return best.front().id;
}

PairRecord MakePair(const std::vector<Pose>& poses, std::size_t query_id, std::size_t ref_id) {
  if (query_id >= poses.size() || ref_id >= poses.size()) throw InvalidInput("make_pair: view id out of range");
  if (query_id == ref_id) throw InvalidInput("make_pair: self pair for view " + std::to_string(query_id));
  return {query_id, ref_id, geometry::ComputeRelativePose(poses[ref_id], poses[query_id]), poses[ref_id]};
}

std::vector<PairRecord> BuildPairs(const std::vector<Pose>& poses, const DescriptorIndex& index, std::size_t k) {
  if (k == 0) throw InvalidInput("build_pairs: k must be >= 1");
  if (index.size() < k + 1) {
    throw InvalidInput("build_pairs: need at least k + 1 = " + std::to_string(k + 1) + " views, got " +
                       std::to_string(index.size()));
  }
  std::vector<PairRecord> pairs;
  pairs.reserve(index.size() * k);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::size_t q = index.id(i);
    for (const Neighbor& n : KNearest(index.descriptor(i), index, k, q)) pairs.push_back(MakePair(poses, q, n.id));
  }
  return pairs;
}

}  // namespace relformer::data
