#include "relformer/data/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace relformer::data {

namespace {

constexpr std::size_t kWaves = 3;
constexpr std::size_t kMaxTries = 1000;

Vec3 UniformInBox(const Vec3& lo, const Vec3& hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = lo[i] + u(rng) * (hi[i] - lo[i]);
  return p;
}

Vec3 UnitVector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Camera looking from `eye` toward `target` with world +z as up.
geometry::Rotation LookAt(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(forward.dot(up)) > 0.99) up = Vec3::UnitY();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  geometry::Mat3 m;
  m.col(0) = right;
  m.col(1) = down;
  m.col(2) = forward;
  return geometry::Rotation::FromTrusted(m);
}

// Rotate from `from` toward `to` by at most `max_rad`.
geometry::Rotation TurnToward(const geometry::Rotation& from, const geometry::Rotation& to, double max_rad) {
  Eigen::AngleAxisd delta(geometry::Mat3(from.matrix().transpose() * to.matrix()));
  if (delta.angle() > max_rad) delta.angle() = max_rad;
  const geometry::Mat3 m = from.matrix() * delta.toRotationMatrix();
  return geometry::Rotation::FromTrusted(geometry::GramSchmidt(m.col(0), m.col(1)));
}

// Reflects p back into [lo, hi] per axis, flipping the matching velocity
// component.
void Reflect(Vec3& p, Vec3& v, const Vec3& lo, const Vec3& hi) {
  for (int i = 0; i < 3; ++i) {
    if (p[i] < lo[i]) {
      p[i] = 2 * lo[i] - p[i];
      v[i] = -v[i];
    } else if (p[i] > hi[i]) {
      p[i] = 2 * hi[i] - p[i];
      v[i] = -v[i];
    }
    p[i] = std::clamp(p[i], lo[i], hi[i]);
  }
}

float Sample(const Image& img, double y, double x, std::size_t c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img.pixels[(yy * img.width + xx) * 3 + c]); };
  const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
  const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

Image Crop(const Image& img, std::size_t top, std::size_t left, std::size_t size) {
  Image out{size, size, std::vector<float>(size * size * 3)};
  for (std::size_t y = 0; y < size; ++y) {
    const float* src = img.pixels.data() + ((top + y) * img.width + left) * 3;
    std::copy(src, src + size * 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(y * size * 3));
  }
  return out;
}

Image Rescaled(const Image& img, std::size_t size, double factor) {
  if (img.height != img.width) throw InvalidInput("crop: expected a square image");
  if (factor < 1.0) throw InvalidInput("crop: rescale factor must be >= 1");
  const auto scaled = static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * factor));
  if (scaled < size) throw InvalidInput("crop: rescaled image smaller than the crop");
  return scaled == img.height ? img : Resize(img, scaled, scaled);
}

}  // namespace

void SceneParams::Validate() const {
  if (num_landmarks < 200) throw ConfigError("scene: num_landmarks must be >= 200, got " + std::to_string(num_landmarks));
  for (int i = 0; i < 3; ++i) {
    if (!(extent[i] > 0.0) || !std::isfinite(extent[i])) throw ConfigError("scene: extent must be positive and finite");
  }
}

bool Scene::Contains(const Vec3& p, double scale) const {
  const Vec3 c = center();
  for (int i = 0; i < 3; ++i) {
    const double half = 0.5 * (upper[i] - lower[i]) * scale;
    if (p[i] < c[i] - half || p[i] > c[i] + half) return false;
  }
  return true;
}

Scene GenerateScene(std::size_t id, std::uint64_t seed, const SceneParams& params) {
  params.Validate();
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.id = id;
  scene.seed = seed;
  scene.lower = -0.5 * params.extent;
  scene.upper = 0.5 * params.extent;

  std::uniform_real_distribution<double> freq(0.6, 1.8), phase(0.0, 2.0 * std::numbers::pi);
  Vec3 dirs[3][kWaves];
  double phases[3][kWaves];
  for (int c = 0; c < 3; ++c) {
    for (std::size_t w = 0; w < kWaves; ++w) {
      dirs[c][w] = UnitVector(rng) * freq(rng);
      phases[c][w] = phase(rng);
    }
  }

  std::normal_distribution<double> noise(0.0, 0.03);
  scene.positions.reserve(params.num_landmarks);
  scene.colors.reserve(params.num_landmarks);
  for (std::size_t i = 0; i < params.num_landmarks; ++i) {
    const Vec3 p = UniformInBox(scene.lower, scene.upper, rng);
    Vec3 color;
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t w = 0; w < kWaves; ++w) s += std::sin(dirs[c][w].dot(p) + phases[c][w]);
      color[c] = std::clamp(0.5 + 0.2 * s + noise(rng), 0.0, 1.0);
    }
    scene.positions.push_back(p);
    scene.colors.push_back(color);
  }
  return scene;
}

bool LooksAtInterior(const Scene& scene, const Pose& pose) {
  const Vec3 dir = pose.R.matrix().col(2);
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dir[i]) < 1e-15) {
      if (pose.x[i] < scene.lower[i] || pose.x[i] > scene.upper[i]) return false;
      continue;
    }
    double a = (scene.lower[i] - pose.x[i]) / dir[i];
    double b = (scene.upper[i] - pose.x[i]) / dir[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t0 <= t1;
}

std::vector<Pose> SampleTrajectory(const Scene& scene, std::uint64_t seed, std::size_t count,
                                   const TrajectoryParams& params) {
  if (count < 2) throw InvalidInput("sample_trajectory: count must be >= 2, got " + std::to_string(count));
  std::mt19937_64 rng(seed);
  const Vec3 c = scene.center();
  const Vec3 half = 0.5 * (scene.upper - scene.lower);
  const Vec3 cam_lo = c - params.position_scale * half, cam_hi = c + params.position_scale * half;
  const Vec3 tgt_lo = c - params.target_scale * half, tgt_hi = c + params.target_scale * half;
  const double max_turn = params.max_turn_deg * std::numbers::pi / 180.0;

  Vec3 target = UniformInBox(tgt_lo, tgt_hi, rng);
  Vec3 eye;
  std::size_t tries = 0;
  do {
    if (++tries > kMaxTries) throw DegenerateInput("sample_trajectory: no start pose far enough from the target");
    eye = UniformInBox(cam_lo, cam_hi, rng);
  } while ((eye - target).norm() < params.min_target_distance);

  std::vector<Pose> poses;
  poses.reserve(count);
  poses.push_back({eye, LookAt(eye, target)});
  Vec3 velocity = Vec3::Zero();
  Vec3 target_velocity = Vec3::Zero();
  std::normal_distribution<double> n(0.0, 1.0);

  while (poses.size() < count) {
    const Pose& prev = poses.back();
    bool accepted = false;
    for (tries = 0; tries < kMaxTries && !accepted; ++tries) {
      Vec3 v = 0.7 * velocity + 0.3 * params.mean_step * Vec3(n(rng), n(rng), n(rng));
      if (v.norm() > 0.95 * params.max_step) v *= 0.95 * params.max_step / v.norm();
      Vec3 x = prev.x + v;
      Reflect(x, v, cam_lo, cam_hi);
      Vec3 tv = 0.7 * target_velocity + 0.3 * 0.5 * params.mean_step * Vec3(n(rng), n(rng), n(rng));
      Vec3 t = target + tv;
      Reflect(t, tv, tgt_lo, tgt_hi);
      if ((x - t).norm() < params.min_target_distance) continue;
      if ((x - prev.x).norm() > params.max_step) continue;

      const Pose next{x, TurnToward(prev.R, LookAt(x, t), max_turn)};
      if (geometry::AngularErrorDeg(prev.R, next.R) > params.max_turn_deg) continue;
      if (!LooksAtInterior(scene, next)) continue;
      poses.push_back(next);
      velocity = v;
      target = t;
      target_velocity = tv;
      accepted = true;
    }
    if (!accepted) throw DegenerateInput("sample_trajectory: could not extend the walk within the step bounds");
  }
  return poses;
}

Intrinsics Intrinsics::ForSize(std::size_t size) {
  const double s = static_cast<double>(size);
  return {size, size, 0.8 * s, 0.8 * s, 0.5 * s, 0.5 * s};
}

std::optional<Projection> Project(const Intrinsics& k, const Pose& pose, const Vec3& p, double near) {
  const Vec3 pc = pose.R.matrix().transpose() * (p - pose.x);
  if (pc.z() <= near) return std::nullopt;
  return Projection{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy, pc.z()};
}

Image RenderView(const Scene& scene, const Pose& pose, const Intrinsics& k, const RenderParams& params,
                 RenderStats* stats) {
  const std::size_t h = k.height, w = k.width;
  Image img{h, w, std::vector<float>(h * w * 3, static_cast<float>(params.background))};
  std::vector<double> zbuf(h * w, std::numeric_limits<double>::infinity());
  RenderStats local;

  for (std::size_t i = 0; i < scene.positions.size(); ++i) {
    const auto proj = Project(k, pose, scene.positions[i]);
    if (!proj) continue;
    const double r = std::clamp(params.splat_size * k.fx / proj->depth, params.min_radius, params.max_radius);
    const double y_lo = std::floor(proj->v - r), y_hi = std::ceil(proj->v + r);
    const double x_lo = std::floor(proj->u - r), x_hi = std::ceil(proj->u + r);
    if (y_hi < 0 || x_hi < 0 || y_lo >= static_cast<double>(h) || x_lo >= static_cast<double>(w)) continue;
    bool drawn = false;
    for (double py = std::max(y_lo, 0.0); py <= std::min(y_hi, static_cast<double>(h - 1)); ++py) {
      for (double px = std::max(x_lo, 0.0); px <= std::min(x_hi, static_cast<double>(w - 1)); ++px) {
        const double dy = py + 0.5 - proj->v, dx = px + 0.5 - proj->u;
        if (dx * dx + dy * dy > r * r) continue;
        const std::size_t idx = static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px);
        drawn = true;
        if (proj->depth >= zbuf[idx]) continue;
        zbuf[idx] = proj->depth;
        for (int c = 0; c < 3; ++c) img.pixels[idx * 3 + static_cast<std::size_t>(c)] = static_cast<float>(scene.colors[i][c]);
      }
    }
    if (drawn) ++local.visible;
  }

  std::size_t touched = 0;
  for (double z : zbuf) touched += std::isfinite(z) ? 1 : 0;
  local.coverage = static_cast<double>(touched) / static_cast<double>(h * w);
  if (stats) *stats = local;
  if (local.visible == 0) throw EmptyView("render_view: no landmark is visible");
  if (local.coverage < params.min_coverage) {
    throw EmptyView("render_view: splats cover " + std::to_string(local.coverage) + " of the image, below " +
                    std::to_string(params.min_coverage));
  }
  return img;
}

Image Resize(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == 0 || image.width == 0 || height == 0 || width == 0) throw InvalidInput("resize: empty image");
  Image out{height, width, std::vector<float>(height * width * 3)};
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
      const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      for (std::size_t c = 0; c < 3; ++c) out.pixels[(y * width + x) * 3 + c] = Sample(image, src_y, src_x, c);
    }
  }
  return out;
}

Image RandomCrop(const Image& image, std::size_t size, double factor, std::mt19937_64& rng) {
  const Image scaled = Rescaled(image, size, factor);
  std::uniform_int_distribution<std::size_t> top(0, scaled.height - size), left(0, scaled.width - size);
  const std::size_t t = top(rng);
  return Crop(scaled, t, left(rng), size);
}

Image CenterCrop(const Image& image, std::size_t size, double factor) {
  const Image scaled = Rescaled(image, size, factor);
  return Crop(scaled, (scaled.height - size) / 2, (scaled.width - size) / 2, size);
}

void ColorJitter(Image&, std::mt19937_64&) {}

}  // namespace relformer::data
