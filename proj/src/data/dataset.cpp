#include "relformer/data/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "relformer/json_util.hpp"
#include "relformer/seed.hpp"

namespace relformer::data {

namespace {

constexpr std::size_t kTrajectoryAttempts = 50;
constexpr const char* kFormat = "relformer-dataset";
constexpr int kVersion = 1;

using json::Read;
using json::RejectUnknownKeys;

void Require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("gen: " + what);
}

std::string SceneDir(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", id);
  return buf;
}

std::string ImageName(std::size_t view) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.rft", view);
  return buf;
}

std::string Join(const std::string& a, const std::string& b) { return (std::filesystem::path(a) / b).string(); }

}  // namespace

void GenConfig::Validate() const {
  Require(scenes >= 1, "scenes must be >= 1");
  Require(k >= 1, "k must be >= 1");
  Require(views_per_scene >= k + 1, "views_per_scene must exceed k");
  Require(image_size >= 16 && image_size % 16 == 0, "image_size must be a positive multiple of 16");
  scene.Validate();
  const auto& t = trajectory;
  Require(t.max_step > 0.0 && t.mean_step > 0.0 && t.mean_step <= t.max_step, "trajectory steps must satisfy 0 < mean_step <= max_step");
  Require(t.max_turn_deg > 0.0 && t.max_turn_deg <= 180.0, "trajectory.max_turn_deg must be in (0, 180]");
  Require(t.min_target_distance >= 0.0, "trajectory.min_target_distance must be >= 0");
  Require(t.position_scale > 0.0 && t.position_scale <= 1.5, "trajectory.position_scale must be in (0, 1.5]");
  Require(t.target_scale > 0.0 && t.target_scale <= 1.0, "trajectory.target_scale must be in (0, 1]");
  const auto& r = render;
  Require(r.splat_size > 0.0, "render.splat_size must be positive");
  Require(r.min_radius > 0.0 && r.min_radius <= r.max_radius, "render radii must satisfy 0 < min_radius <= max_radius");
  Require(r.background >= 0.0 && r.background <= 1.0, "render.background must be in [0, 1]");
  Require(r.min_coverage >= 0.05 && r.min_coverage < 1.0, "render.min_coverage must be in [0.05, 1)");
}

nlohmann::json ToJson(const GenConfig& c) {
  return {
      {"seed", c.seed},
      {"scenes", c.scenes},
      {"views_per_scene", c.views_per_scene},
      {"image_size", c.image_size},
      {"k", c.k},
      {"scene", {{"landmarks", c.scene.num_landmarks}, {"extent", {c.scene.extent.x(), c.scene.extent.y(), c.scene.extent.z()}}}},
      {"trajectory",
       {{"max_step", c.trajectory.max_step},
        {"max_turn_deg", c.trajectory.max_turn_deg},
        {"mean_step", c.trajectory.mean_step},
        {"min_target_distance", c.trajectory.min_target_distance},
        {"position_scale", c.trajectory.position_scale},
        {"target_scale", c.trajectory.target_scale}}},
      {"render",
       {{"splat_size", c.render.splat_size},
        {"min_radius", c.render.min_radius},
        {"max_radius", c.render.max_radius},
        {"background", c.render.background},
        {"min_coverage", c.render.min_coverage}}},
  };
}

GenConfig GenConfigFromJson(const nlohmann::json& j) {
  GenConfig c;
  RejectUnknownKeys(j, {"seed", "scenes", "views_per_scene", "image_size", "k", "scene", "trajectory", "render"}, "gen");
  Read(j, "seed", c.seed, "gen");
  Read(j, "scenes", c.scenes, "gen");
  Read(j, "views_per_scene", c.views_per_scene, "gen");
  Read(j, "image_size", c.image_size, "gen");
  Read(j, "k", c.k, "gen");
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    RejectUnknownKeys(s, {"landmarks", "extent"}, "gen.scene");
    Read(s, "landmarks", c.scene.num_landmarks, "gen.scene");
    if (s.contains("extent")) {
      std::vector<double> e;
      Read(s, "extent", e, "gen.scene");
      if (e.size() != 3) throw ConfigError("gen.scene.extent: expected three side lengths");
      c.scene.extent = Vec3(e[0], e[1], e[2]);
    }
  }
  if (j.contains("trajectory")) {
    const auto& t = j.at("trajectory");
    const std::string w = "gen.trajectory";
    RejectUnknownKeys(t, {"max_step", "max_turn_deg", "mean_step", "min_target_distance", "position_scale", "target_scale"}, w);
    Read(t, "max_step", c.trajectory.max_step, w);
    Read(t, "max_turn_deg", c.trajectory.max_turn_deg, w);
    Read(t, "mean_step", c.trajectory.mean_step, w);
    Read(t, "min_target_distance", c.trajectory.min_target_distance, w);
    Read(t, "position_scale", c.trajectory.position_scale, w);
    Read(t, "target_scale", c.trajectory.target_scale, w);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    const std::string w = "gen.render";
    RejectUnknownKeys(r, {"splat_size", "min_radius", "max_radius", "background", "min_coverage"}, w);
    Read(r, "splat_size", c.render.splat_size, w);
    Read(r, "min_radius", c.render.min_radius, w);
    Read(r, "max_radius", c.render.max_radius, w);
    Read(r, "background", c.render.background, w);
    Read(r, "min_coverage", c.render.min_coverage, w);
  }
  c.Validate();
  return c;
}

model::BackboneConfig DescriptorBackboneConfig(std::size_t image_size) {
  model::BackboneConfig b = model::ModelConfig::DeskScale().backbone;
  b.image_size = image_size;
  return b;
}

const SceneEntry& Manifest::Scene(std::size_t id) const {
  for (const auto& s : scenes) {
    if (s.id == id) return s;
  }
  throw InvalidInput("dataset " + root + " has no scene " + std::to_string(id));
}

GeneratedScene GenerateSceneViews(const GenConfig& config, std::size_t scene_id) {
  config.Validate();
  GeneratedScene out;
  out.scene = GenerateScene(scene_id, DeriveSeed(config.seed, seed_stream::kScene, scene_id), config.scene);
  const Intrinsics k = Intrinsics::ForSize(config.image_size);
  const std::uint64_t base = DeriveSeed(config.seed, seed_stream::kTrajectory, scene_id);
  for (std::size_t attempt = 0; attempt < kTrajectoryAttempts; ++attempt) {
    out.trajectory_seed = DeriveSeed(base, attempt);
    out.poses = SampleTrajectory(out.scene, out.trajectory_seed, config.views_per_scene, config.trajectory);
    out.images.assign(out.poses.size(), Image{});
    std::vector<char> empty(out.poses.size(), 0);
    const auto n = static_cast<std::ptrdiff_t>(out.poses.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto v = static_cast<std::size_t>(i);
      try {
        out.images[v] = RenderView(out.scene, out.poses[v], k, config.render);
      } catch (const EmptyView&) {
        empty[v] = 1;
      }
    }
    if (std::find(empty.begin(), empty.end(), 1) == empty.end()) return out;
  }
  throw DegenerateInput("gen: scene " + std::to_string(scene_id) + " kept producing empty views after " +
                        std::to_string(kTrajectoryAttempts) + " trajectories");
}

Manifest GenerateDataset(const GenConfig& config, const std::string& out_dir) {
  config.Validate();
  EnsureDirectory(out_dir);

  Manifest m;
  m.root = out_dir;
  m.seed = config.seed;
  m.image_size = config.image_size;
  m.k = config.k;
  m.descriptor_seed = DeriveSeed(config.seed, seed_stream::kDescriptor);
  m.config = config;
  const model::Backbone<float> backbone = DescriptorBackbone(m);

  for (std::size_t s = 0; s < config.scenes; ++s) {
    GeneratedScene g = GenerateSceneViews(config, s);
    const auto descriptors = GlobalDescriptors(g.images, backbone);
    DescriptorIndex index(backbone.config().DescriptorDim());
    for (std::size_t v = 0; v < descriptors.size(); ++v) index.Add(v, descriptors[v]);
    std::vector<IdPair> pairs;
    for (const auto& p : BuildPairs(g.poses, index, config.k)) pairs.emplace_back(p.query_id, p.ref_id);

    SceneEntry e{s, SceneDir(s), g.scene.seed, g.trajectory_seed, g.poses.size(), pairs.size()};
    const std::string dir = Join(out_dir, e.dir);
    EnsureDirectory(Join(dir, "images"));
    WritePosesCsv(Join(dir, "poses.csv"), g.poses);
    WritePairsCsv(Join(dir, "pairs.csv"), pairs);
    std::vector<double> flat;
    for (const auto& d : descriptors) flat.insert(flat.end(), d.begin(), d.end());
    WriteTensorFile<double>(Join(dir, "descriptors.rft"), {descriptors.size(), index.dim()}, flat);
    for (std::size_t v = 0; v < g.images.size(); ++v) SaveImage(Join(Join(dir, "images"), ImageName(v)), g.images[v]);
    m.scenes.push_back(e);
  }

  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& e : m.scenes) {
    scenes.push_back({{"id", e.id},
                      {"dir", e.dir},
                      {"scene_seed", e.scene_seed},
                      {"trajectory_seed", e.trajectory_seed},
                      {"views", e.views},
                      {"pairs", e.pairs}});
  }
  const nlohmann::json j = {{"format", kFormat},        {"version", kVersion},
                            {"seed", m.seed},           {"image_size", m.image_size},
                            {"k", m.k},                 {"descriptor_seed", m.descriptor_seed},
                            {"scenes", scenes},         {"config", ToJson(config)}};
  const std::string text = j.dump(2) + "\n";
  WriteTextFile(Join(out_dir, "manifest.json"), text);
  m.hash = json::Fnv1a(text);
  return m;
}

Manifest LoadManifest(const std::string& root) {
  const std::string path = Join(root, "manifest.json");
  const std::string text = ReadTextFile(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  try {
    RejectUnknownKeys(j, {"format", "version", "seed", "image_size", "k", "descriptor_seed", "scenes", "config"}, path);
    if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) throw IoError(path + ": unsupported format");
    Manifest m;
    m.root = root;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<std::size_t>();
    m.k = j.at("k").get<std::size_t>();
    m.descriptor_seed = j.at("descriptor_seed").get<std::uint64_t>();
    m.config = GenConfigFromJson(j.at("config"));
    for (const auto& s : j.at("scenes")) {
      RejectUnknownKeys(s, {"id", "dir", "scene_seed", "trajectory_seed", "views", "pairs"}, path + " scenes[]");
      m.scenes.push_back({s.at("id").get<std::size_t>(), s.at("dir").get<std::string>(), s.at("scene_seed").get<std::uint64_t>(),
                          s.at("trajectory_seed").get<std::uint64_t>(), s.at("views").get<std::size_t>(),
                          s.at("pairs").get<std::size_t>()});
    }
    m.hash = json::Fnv1a(text);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::vector<std::size_t> SceneData::Pool(std::size_t query_id) const {
  std::vector<std::size_t> refs;
  for (const auto& [q, r] : pairs) {
    if (q == query_id) refs.push_back(r);
  }
  return refs;
}

SceneData LoadScene(const Manifest& manifest, std::size_t scene_id) {
  const SceneEntry& e = manifest.Scene(scene_id);
  const std::string dir = Join(manifest.root, e.dir);
  SceneData s;
  s.id = e.id;
  s.poses = ReadPosesCsv(Join(dir, "poses.csv"));
  if (s.poses.size() != e.views) throw IoError(dir + ": poses.csv has " + std::to_string(s.poses.size()) + " views, manifest says " + std::to_string(e.views));
  s.pairs = ReadPairsCsv(Join(dir, "pairs.csv"));
  if (s.pairs.size() != e.pairs) throw IoError(dir + ": pairs.csv does not match the manifest");
  for (const auto& [q, r] : s.pairs) {
    if (q >= e.views || r >= e.views || q == r) throw IoError(dir + ": invalid pair " + std::to_string(q) + "," + std::to_string(r));
  }
  const auto d = ReadTensorFile<double>(Join(dir, "descriptors.rft"));
  if (d.shape.size() != 2 || d.shape[0] != e.views) throw IoError(dir + ": descriptors.rft has the wrong shape");
  s.index = DescriptorIndex(d.shape[1]);
  for (std::size_t v = 0; v < e.views; ++v) s.index.Add(v, std::span<const double>(d.data.data() + v * d.shape[1], d.shape[1]));
  s.images.reserve(e.views);
  for (std::size_t v = 0; v < e.views; ++v) {
    Image img = LoadImage(Join(Join(dir, "images"), ImageName(v)));
    if (img.height != manifest.image_size || img.width != manifest.image_size) throw IoError(dir + ": image " + std::to_string(v) + " has the wrong size");
    s.images.push_back(std::move(img));
  }
  return s;
}

model::Backbone<float> DescriptorBackbone(const Manifest& manifest) {
  std::mt19937_64 rng(manifest.descriptor_seed);
  return model::Backbone<float>(DescriptorBackboneConfig(manifest.image_size), rng);
}

}  // namespace relformer::data
