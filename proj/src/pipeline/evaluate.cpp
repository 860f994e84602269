#include "relformer/pipeline/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "relformer/json_util.hpp"
#include "relformer/pipeline/batch.hpp"

namespace relformer::pipeline {

namespace {

std::string Join(const std::string& a, const std::string& b) { return (std::filesystem::path(a) / b).string(); }

struct Query {
  std::size_t scene = 0;  // position in the loaded scene list
  std::size_t query = 0;
  std::size_t ref = 0;
};

geometry::RelativePose Decode(const float* dx, const float* rot, model::RotationKind kind) {
  std::vector<double> raw(model::RotationDim(kind));
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rot[i];
  return {geometry::Vec3(dx[0], dx[1], dx[2]), objective::DecodeRotation(raw, kind)};
}

// Relative poses predicted by the network for (reference, query) image pairs.
std::vector<geometry::RelativePose> Predict(const TrainedModel& trained, const std::vector<const data::Image*>& refs,
                                            const std::vector<const data::Image*>& queries, std::size_t batch) {
  const model::ModelConfig& mc = trained.meta.model;
  const Preprocess prep{trained.meta.augment, trained.meta.rescale};
  const std::size_t size = mc.backbone.image_size;
  const std::size_t n = refs.size();
  std::vector<geometry::RelativePose> out(n);
  const auto batches = static_cast<std::ptrdiff_t>((n + batch - 1) / batch);
  // Batches are independent and the model is read-only.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t bb = 0; bb < batches; ++bb) {
    diff::NoGradGuard no_grad;
    const std::size_t start = static_cast<std::size_t>(bb) * batch, count = std::min(batch, n - start);
    std::vector<data::Image> first, second;
    for (std::size_t i = start; i < start + count; ++i) {
      first.push_back(PrepareImage(*refs[i], size, prep, nullptr));
      second.push_back(PrepareImage(*queries[i], size, prep, nullptr));
    }
    const auto pred = trained.model.Forward(StackImages(first), StackImages(second), {false, nullptr});
    const std::size_t k = model::RotationDim(mc.rotation);
    for (std::size_t i = 0; i < count; ++i) {
      out[start + i] = Decode(pred.dx.data().data() + 3 * i, pred.rot.data().data() + k * i, mc.rotation);
    }
  }
  return out;
}

void WriteText(const std::string& path, const std::string& text) { data::WriteTextFile(path, text); }

}  // namespace

double Median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void Summarize(EvalReport& report) {
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_scene;
  for (const auto& r : report.rows) {
    by_scene[r.scene].first.push_back(r.position_error);
    by_scene[r.scene].second.push_back(r.rotation_error);
  }
  report.scenes.clear();
  double sp = 0.0, sr = 0.0;
  for (const auto& [scene, errs] : by_scene) {
    const SceneSummary s{scene, errs.first.size(), Median(errs.first), Median(errs.second)};
    sp += s.median_position;
    sr += s.median_rotation;
    report.scenes.push_back(s);
  }
  if (report.scenes.empty()) throw InvalidInput("eval: no queries to summarize");
  report.mean_median_position = sp / static_cast<double>(report.scenes.size());
  report.mean_median_rotation = sr / static_cast<double>(report.scenes.size());
}

void CheckCompatible(const TrainedModel& trained, const RunConfig& config, const data::Manifest& manifest) {
  if (config.model_given && model::ConfigHash(config.model) != trained.meta.config_hash) {
    throw ConfigError("config hash mismatch: run config " + json::HexHash(model::ConfigHash(config.model)) +
                      ", checkpoint " + json::HexHash(trained.meta.config_hash));
  }
  if (manifest.hash != trained.meta.dataset_hash) {
    throw ConfigError("dataset hash mismatch: " + manifest.root + " is " + json::HexHash(manifest.hash) +
                      ", the checkpoint was trained on " + json::HexHash(trained.meta.dataset_hash));
  }
  if (manifest.image_size != trained.meta.model.backbone.image_size) {
    throw ConfigError("dataset image size differs from the model input size");
  }
}

EvalReport Evaluate(const RunConfig& config, const TrainedModel* trained) {
  const EvalConfig& ec = config.eval;
  if (ec.predictor == Predictor::kModel && !trained) throw ConfigError("eval: the model predictor needs a checkpoint");

  std::vector<data::SceneData> scenes;
  std::vector<Query> queries;
  data::Manifest manifest;
  if (ec.split == EvalSplit::kTrainPairs) {
    TrainingData td = LoadTrainingData(config.train, config.seed);
    manifest = td.manifest;
    scenes = std::move(td.scenes);
    for (const auto& s : td.samples) queries.push_back({s.scene, s.query, s.pool.front()});
  } else {
    const std::string root = ec.dataset.empty() ? config.train.dataset : ec.dataset;
    if (root.empty()) throw ConfigError("eval.dataset is required");
    manifest = data::LoadManifest(root);
    std::vector<std::size_t> ids = ec.scenes;
    if (ids.empty()) {
      for (const auto& s : manifest.scenes) ids.push_back(s.id);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      scenes.push_back(data::LoadScene(manifest, ids[i]));
      const data::SceneData& s = scenes.back();
      const std::size_t db = ec.database_views;
      if (db == 0) {
        for (std::size_t q = 0; q < s.poses.size(); ++q) {
          queries.push_back({i, q, data::NearestNeighbor(s.index.descriptor(q), s.index, q)});
        }
        continue;
      }
      if (db >= s.poses.size()) {
        throw ConfigError("eval.database_views " + std::to_string(db) + " leaves no queries in scene " +
                          std::to_string(s.id));
      }
      data::DescriptorIndex database(s.index.dim());
      for (std::size_t v = 0; v < db; ++v) database.Add(v, s.index.descriptor(v));
      for (std::size_t q = db; q < s.poses.size(); ++q) {
        queries.push_back({i, q, data::NearestNeighbor(s.index.descriptor(q), database)});
      }
    }
  }
  if (trained) CheckCompatible(*trained, config, manifest);

  std::vector<geometry::RelativePose> rel(queries.size());
  if (ec.predictor == Predictor::kModel) {
    std::vector<const data::Image*> refs, qs;
    for (const auto& q : queries) {
      refs.push_back(&scenes[q.scene].images[q.ref]);
      qs.push_back(&scenes[q.scene].images[q.query]);
    }
    rel = Predict(*trained, refs, qs, ec.batch_size);
  } else {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& s = scenes[queries[i].scene];
      rel[i] = ec.predictor == Predictor::kOracle
                   ? geometry::ComputeRelativePose(s.poses[queries[i].ref], s.poses[queries[i].query])
                   : geometry::RelativePose{geometry::Vec3::Zero(), geometry::Rotation::Identity()};
    }
  }

  EvalReport report;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const auto& s = scenes[q.scene];
    const geometry::Pose est = geometry::RecoverPose(s.poses[q.ref], rel[i]);
    const geometry::Pose& gt = s.poses[q.query];
    report.rows.push_back({s.id, q.query, q.ref, (est.x - gt.x).norm(), geometry::AngularErrorDeg(est.R, gt.R)});
  }
  Summarize(report);
  return report;
}

void WriteEvalReport(const EvalReport& report, const std::string& out_dir) {
  data::EnsureDirectory(out_dir);
  char buf[256];
  std::string errors = "scene,query_id,ref_id,position_error_m,rotation_error_deg\n";
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g\n", r.scene, r.query, r.ref, r.position_error, r.rotation_error);
    errors += buf;
  }
  WriteText(Join(out_dir, "errors.csv"), errors);
  std::string summary = "scene,queries,median_position_m,median_rotation_deg\n";
  for (const auto& s : report.scenes) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", s.scene, s.queries, s.median_position, s.median_rotation);
    summary += buf;
  }
  std::snprintf(buf, sizeof buf, "average,%zu,%.17g,%.17g\n", report.rows.size(), report.mean_median_position,
                report.mean_median_rotation);
  summary += buf;
  WriteText(Join(out_dir, "summary.csv"), summary);
}

std::string FormatSummaryTable(const EvalReport& report) {
  std::string out = "scene    queries   median pos (m)   median rot (deg)\n";
  char buf[128];
  for (const auto& s : report.scenes) {
    std::snprintf(buf, sizeof buf, "%-8zu %7zu   %14.4f   %16.3f\n", s.scene, s.queries, s.median_position, s.median_rotation);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-8s %7zu   %14.4f   %16.3f\n", "average", report.rows.size(), report.mean_median_position,
                report.mean_median_rotation);
  return out + buf;
}

LocalizeResult Localize(const TrainedModel& trained, const model::Backbone<float>& descriptor_backbone,
                        const data::SceneData& database, const data::Image& query) {
  if (database.index.empty() || database.poses.empty()) throw InvalidInput("localize: the database is empty");
  const auto d = data::GlobalDescriptors({query}, descriptor_backbone).front();
  const auto best = data::KNearest(d, database.index, 1);
  const std::size_t ref = best.front().id;
  const auto rel = Predict(trained, {&database.images.at(ref)}, {&query}, 1).front();
  return {ref, best.front().similarity, geometry::RecoverPose(database.poses.at(ref), rel)};
}

}  // namespace relformer::pipeline
