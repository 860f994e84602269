#pragma once

// Synthetic scenes: colored landmark clouds, smooth camera walks and a
// z-buffered point-splat renderer.
//
// Camera frame: x right, y down, z along the optical axis. Pose.R maps camera
// to world coordinates, so a world point p has camera coordinates R^T (p - x).

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "relformer/errors.hpp"
#include "relformer/geometry.hpp"

namespace relformer::data {

using geometry::Pose;
using geometry::Vec3;

// Thrown when a pose sees no landmarks, or too few to cover the minimum
// fraction of the image. Callers resample.
class EmptyView : public DegenerateInput {
 public:
  using DegenerateInput::DegenerateInput;
};

struct SceneParams {
  std::size_t num_landmarks = 400;
  Vec3 extent{4.0, 4.0, 4.0};  // box side lengths (m), centered at the origin

  void Validate() const;  // throws ConfigError
};

struct Scene {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  Vec3 lower = Vec3::Zero();
  Vec3 upper = Vec3::Zero();
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;  // RGB in [0, 1]

  bool Contains(const Vec3& p, double scale = 1.0) const;
  Vec3 center() const { return 0.5 * (lower + upper); }
};

// Landmarks uniform in the box. Colors are smooth functions of position (a few
// random plane waves per channel, different per seed) plus small noise.
Scene GenerateScene(std::size_t id, std::uint64_t seed, const SceneParams& params);

struct TrajectoryParams {
  double max_step = 0.3;          // m
  double max_turn_deg = 15.0;     // per step
  double mean_step = 0.12;        // typical translation per step
  double min_target_distance = 1.2;
  double position_scale = 1.5;    // camera box relative to the scene extent
  double target_scale = 0.5;      // look-at target box relative to the extent
};

// Smooth random walk whose optical axis always passes through the scene box.
// Deterministic per seed; throws InvalidInput for count < 2.
std::vector<Pose> SampleTrajectory(const Scene& scene, std::uint64_t seed, std::size_t count,
                                   const TrajectoryParams& params = {});

// True when the ray from the camera center along its optical axis meets the
// scene box.
bool LooksAtInterior(const Scene& scene, const Pose& pose);

struct Intrinsics {
  std::size_t width = 64;
  std::size_t height = 64;
  double fx = 51.2;
  double fy = 51.2;
  double cx = 32.0;
  double cy = 32.0;

  // Square image with focal length 0.8 * size and the principal point at the
  // image center (pixel i covers [i, i + 1)).
  static Intrinsics ForSize(std::size_t size);
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

// Pinhole projection; empty when the point is not in front of the near plane.
std::optional<Projection> Project(const Intrinsics& k, const Pose& pose, const Vec3& p, double near = 0.05);

struct RenderParams {
  double splat_size = 0.06;    // world radius (m); pixel radius = splat_size * fx / depth
  double min_radius = 0.6;     // px
  double max_radius = 6.0;     // px
  double background = 0.5;
  double min_coverage = 0.05;  // fraction of pixels touched by splats
};

// H x W x 3 row-major floats in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  std::size_t size() const { return pixels.size(); }
};

struct RenderStats {
  std::size_t visible = 0;  // landmarks projected in front of the camera and inside the image
  double coverage = 0.0;
};

// Throws EmptyView when nothing is visible or coverage < min_coverage.
Image RenderView(const Scene& scene, const Pose& pose, const Intrinsics& k, const RenderParams& params = {},
                 RenderStats* stats = nullptr);

// Bilinear resize with pixel-center alignment.
Image Resize(const Image& image, std::size_t height, std::size_t width);

// Train-time augmentation: rescale by `factor` then crop `size` x `size` at a
// random offset. Eval-time: same rescale, center crop.
Image RandomCrop(const Image& image, std::size_t size, double factor, std::mt19937_64& rng);
Image CenterCrop(const Image& image, std::size_t size, double factor);

// Color jitter is intentionally a no-op; the hook keeps the call site stable.
void ColorJitter(Image& image, std::mt19937_64& rng);

}  // namespace relformer::data
