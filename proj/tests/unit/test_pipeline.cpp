#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "relformer/data/storage.hpp"
#include "relformer/errors.hpp"
#include "relformer/pipeline/ablate.hpp"
#include "relformer/pipeline/evaluate.hpp"
#include "relformer/pipeline/train.hpp"

using namespace relformer;
using namespace relformer::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relformer_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string ReadAll(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

data::GenConfig SmallGen() {
  data::GenConfig c;
  c.seed = 21;
  c.scenes = 2;
  c.views_per_scene = 24;
  c.image_size = 32;
  c.k = 3;
  c.scene.num_landmarks = 300;
  return c;
}

model::ModelConfig TinyModel() {
  model::ModelConfig c;
  c.backbone.image_size = 32;
  c.backbone.stages = {{8, 2}, {16, 2}, {16, 2}, {24, 2}};
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.hidden = 16;
  c.encoder.mlp_dim = 32;
  return c;
}

// One small dataset shared by every case.
const std::string& Dataset() {
  static const std::string root = [] {
    const fs::path dir = TempDir("dataset");
    data::GenerateDataset(SmallGen(), dir.string());
    return dir.string();
  }();
  return root;
}

RunConfig TinyRun(const std::string& out) {
  RunConfig c;
  c.seed = 5;
  c.out = out;
  c.gen = SmallGen();
  c.model = TinyModel();
  c.model_given = true;
  c.train.dataset = Dataset();
  c.train.scenes = {0};
  c.train.batch_size = 4;
  c.train.pair_limit = 8;
  c.train.epochs = 3;
  c.train.augment = false;
  c.train.checkpoint_every = 1;
  c.eval.dataset = Dataset();
  return c;
}

double SortMedian(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

TEST_CASE("median") {
  CHECK(Median({3, 1, 2}) == 2.0);
  CHECK(Median({4, 1, 3, 2}) == 2.5);
  CHECK(Median({5}) == 5.0);
  CHECK_THROWS_AS(Median({}), InvalidInput);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (std::size_t n = 1; n < 60; ++n) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    // Middle elements by selection rather than a full sort.
    std::vector<double> w = v;
    std::nth_element(w.begin(), w.begin() + n / 2, w.end());
    double expected = w[n / 2];
    if (n % 2 == 0) expected = (expected + *std::max_element(w.begin(), w.begin() + n / 2)) / 2.0;
    CHECK(std::abs(Median(v) - expected) <= 1e-12);
  }
}

TEST_CASE("run config is strict and round trips") {
  RunConfig c = TinyRun("out_dir");
  c.eval.split = EvalSplit::kTrainPairs;
  c.ablate.seeds = {1, 2, 3};
  const RunConfig back = RunConfigFromJson(ToJson(c));
  CHECK(ToJson(back) == ToJson(c));
  CHECK(back.model_given);

  auto rejects = [](const nlohmann::json& j) { CHECK_THROWS_AS(RunConfigFromJson(j), ConfigError); };
  rejects({{"bogus", 1}});
  rejects({{"train", {{"bogus", 1}}}});
  rejects({{"eval", {{"bogus", 1}}}});
  rejects({{"ablate", {{"bogus", 1}}}});
  rejects({{"gen", {{"render", {{"bogus", 1}}}}}});
  rejects({{"model", {{"encoder", {{"bogus", 1}}}}}});
  rejects({{"train", {{"lr", 0.0}}}});
  rejects({{"train", {{"lr", "fast"}}}});
  rejects({{"train", {{"batch_size", 0}}}});
  rejects({{"eval", {{"split", "test"}}}});
  rejects({{"eval", {{"predictor", "magic"}}}});
  rejects({{"ablate", {{"rotations", {"euler"}}}}});
  rejects({{"ablate", {{"seeds", nlohmann::json::array()}}}});

  const RunConfig d = RunConfigFromJson({{"seed", 42}});
  CHECK(d.seed == 42);
  CHECK(d.gen.seed == 42);
  CHECK_FALSE(d.model_given);
  CHECK(d.train.lr == 1e-4);
  CHECK(d.train.weight_decay == 1e-4);
  CHECK(d.train.batch_size == 8);
  CHECK(RunConfigFromJson({{"seed", 42}, {"gen", {{"seed", 7}}}}).gen.seed == 7);

  CHECK(ParseSceneList("0,1,3") == std::vector<std::size_t>{0, 1, 3});
  CHECK(ParseSceneList("1-3") == std::vector<std::size_t>{1, 2, 3});
  CHECK_THROWS_AS(ParseSceneList("a"), ConfigError);
  CHECK_THROWS_AS(ParseSceneList("3-1"), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = TempDir("ckpt");
  RunConfig c = TinyRun(dir.string());
  c.train.epochs = 1;
  const TrainResult r = Train(c, {dir.string(), "", {}});
  CHECK(fs::exists(dir / "checkpoint_epoch_0001.ckpt"));
  const Checkpoint a = LoadCheckpoint(r.checkpoint_path);
  CHECK(a.step == 2);
  CHECK(a.epoch == 1);
  CHECK(a.names == r.checkpoint.names);
  CHECK(a.values == r.checkpoint.values);
  CHECK(a.m == r.checkpoint.m);
  CHECK(a.v == r.checkpoint.v);
  CHECK(a.rng_state == r.checkpoint.rng_state);
  CHECK(a.config_hash == model::ConfigHash(c.model));

  // Saving what was loaded reproduces the file byte for byte.
  SaveCheckpoint((dir / "copy.ckpt").string(), a);
  CHECK(ReadAll(dir / "copy.ckpt") == ReadAll(r.checkpoint_path));

  const TrainedModel t = LoadTrainedModel(r.checkpoint_path);
  const auto params = t.Parameters();
  std::size_t i = 0;
  for (const auto& [name, tensor] : params) {
    REQUIRE(i < a.names.size());
    CHECK(name == a.names[i]);
    CHECK(std::equal(tensor.data().begin(), tensor.data().end(), a.values[i].begin(), a.values[i].end()));
    ++i;
  }
  CHECK(i == a.names.size());

  std::string bytes = ReadAll(r.checkpoint_path);
  std::ofstream((dir / "truncated.ckpt").string(), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(LoadCheckpoint((dir / "truncated.ckpt").string()), IoError);
  bytes[0] = 'X';
  std::ofstream((dir / "magic.ckpt").string(), std::ios::binary) << bytes;
  CHECK_THROWS_AS(LoadCheckpoint((dir / "magic.ckpt").string()), IoError);
  CHECK_THROWS_AS(LoadCheckpoint((dir / "missing.ckpt").string()), IoError);
}

TEST_CASE("training is deterministic and resume continues the step counter") {
  const fs::path a = TempDir("det_a"), b = TempDir("det_b"), c = TempDir("det_c");
  RunConfig cfg = TinyRun(a.string());
  cfg.train.augment = true;
  cfg.train.pair_limit = 0;  // full pools, random crops and dropout
  cfg.train.epochs = 2;
  Train(cfg, {a.string(), "", {}});
  Train(cfg, {b.string(), "", {}});
  const std::string log = ReadAll(a / "loss.csv");
  CHECK(log == ReadAll(b / "loss.csv"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 1 + 2 * 6);

  // One epoch, then resume from its checkpoint for the second.
  RunConfig first = cfg;
  first.train.epochs = 1;
  const TrainResult r1 = Train(first, {c.string(), "", {}});
  CHECK(r1.checkpoint.step == 6);
  const TrainResult r2 = Train(cfg, {c.string(), r1.checkpoint_path, {}});
  REQUIRE(!r2.log.empty());
  CHECK(r2.log.front().step == 7);
  CHECK(r2.checkpoint.step == 12);
  CHECK(ReadAll(c / "loss.csv") == log);

  RunConfig other = cfg;
  other.model.rotation = model::RotationKind::kQuaternion;
  CHECK_THROWS_AS(Train(other, {c.string(), r1.checkpoint_path, {}}), ConfigError);
}

TEST_CASE("max_steps stops mid-epoch and the log is a prefix of the longer run") {
  const fs::path a = TempDir("steps_a"), b = TempDir("steps_b");
  RunConfig cfg = TinyRun(a.string());
  cfg.train.epochs = 100;
  cfg.train.max_steps = 7;
  const TrainResult r = Train(cfg, {a.string(), "", {}});
  CHECK(r.log.size() == 7);
  CHECK(r.log.back().epoch == 3);
  cfg.train.max_steps = 3;
  Train(cfg, {b.string(), "", {}});
  const std::string longer = ReadAll(a / "loss.csv"), shorter = ReadAll(b / "loss.csv");
  CHECK(longer.compare(0, shorter.size(), shorter) == 0);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const fs::path dir = TempDir("nan");
  const fs::path ds = TempDir("nan_ds");
  fs::copy(Dataset(), ds, fs::copy_options::recursive);
  const std::string image = (ds / "scene_000" / "images" / "000000.rft").string();
  data::Image img = data::LoadImage(image);
  img.pixels[0] = std::numeric_limits<float>::quiet_NaN();
  data::SaveImage(image, img);

  RunConfig cfg = TinyRun(dir.string());
  cfg.train.dataset = ds.string();
  cfg.train.pair_limit = 0;
  cfg.train.batch_size = 24;
  try {
    Train(cfg, {dir.string(), "", {}});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("backbone=") != std::string::npos);
  }
}

TEST_CASE("oracle predictor recovers every query exactly") {
  RunConfig c = TinyRun(TempDir("oracle").string());
  c.eval.predictor = Predictor::kOracle;
  const EvalReport r = Evaluate(c, nullptr);
  CHECK(r.rows.size() == 48);
  CHECK(r.scenes.size() == 2);
  for (const auto& q : r.rows) {
    CHECK(q.position_error <= 1e-12);
    CHECK(q.rotation_error <= 1e-5);
  }
  CHECK(r.mean_median_position <= 1e-12);
}

TEST_CASE("identity predictor matches a brute-force pose gap") {
  RunConfig c = TinyRun(TempDir("identity").string());
  c.eval.predictor = Predictor::kIdentity;
  const EvalReport r = Evaluate(c, nullptr);
  const data::Manifest m = data::LoadManifest(Dataset());

  double pos_sum = 0.0, rot_sum = 0.0;
  for (std::size_t s = 0; s < 2; ++s) {
    const data::SceneData scene = data::LoadScene(m, s);
    std::vector<double> pos, rot;
    for (std::size_t q = 0; q < scene.poses.size(); ++q) {
      std::size_t best = 0;
      double best_sim = -2.0;
      for (std::size_t i = 0; i < scene.index.size(); ++i) {
        if (i == q) continue;
        double sim = 0.0;
        for (std::size_t d = 0; d < scene.index.dim(); ++d) sim += scene.index.descriptor(q)[d] * scene.index.descriptor(i)[d];
        if (sim > best_sim) best_sim = sim, best = i;
      }
      const auto& ref = scene.poses[best];
      const auto& gt = scene.poses[q];
      pos.push_back((ref.x - gt.x).norm());
      const Eigen::AngleAxisd aa(Eigen::Matrix3d(ref.R.matrix().transpose() * gt.R.matrix()));
      rot.push_back(aa.angle() * 180.0 / M_PI);
      bool found = false;
      for (const auto& row : r.rows) {
        if (row.scene == s && row.query == q) {
          found = true;
          CHECK(row.ref == best);
          CHECK(std::abs(row.position_error - pos.back()) <= 1e-12);
          CHECK(std::abs(row.rotation_error - rot.back()) <= 1e-6);
        }
      }
      CHECK(found);
    }
    CHECK(std::abs(r.scenes[s].median_position - SortMedian(pos)) <= 1e-12);
    CHECK(std::abs(r.scenes[s].median_rotation - SortMedian(rot)) <= 1e-6);
    pos_sum += SortMedian(pos);
    rot_sum += SortMedian(rot);
  }
  CHECK(std::abs(r.mean_median_position - pos_sum / 2) <= 1e-12);
  CHECK(std::abs(r.mean_median_rotation - rot_sum / 2) <= 1e-6);
}

TEST_CASE("eval report files reproduce the medians") {
  const fs::path dir = TempDir("report");
  RunConfig c = TinyRun(dir.string());
  c.eval.predictor = Predictor::kIdentity;
  EvalReport r = Evaluate(c, nullptr);
  WriteEvalReport(r, dir.string());

  std::ifstream in(dir / "errors.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "scene,query_id,ref_id,position_error_m,rotation_error_deg");
  EvalReport reread;
  while (std::getline(in, line)) {
    QueryError q;
    std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf,%lf", &q.scene, &q.query, &q.ref, &q.position_error, &q.rotation_error);
    reread.rows.push_back(q);
  }
  Summarize(reread);
  CHECK(reread.mean_median_position == r.mean_median_position);
  CHECK(reread.mean_median_rotation == r.mean_median_rotation);
  CHECK(ReadAll(dir / "summary.csv").rfind("scene,queries,median_position_m,median_rotation_deg\n", 0) == 0);
  CHECK(FormatSummaryTable(r).find("average") != std::string::npos);
}

TEST_CASE("eval with a model checks compatibility") {
  const fs::path dir = TempDir("compat");
  RunConfig c = TinyRun(dir.string());
  c.train.epochs = 1;
  const TrainResult tr = Train(c, {dir.string(), "", {}});
  const TrainedModel t = LoadTrainedModel(tr.checkpoint_path);

  c.eval.split = EvalSplit::kTrainPairs;
  const EvalReport a = Evaluate(c, &t);
  CHECK(a.rows.size() == 8);
  const EvalReport b = Evaluate(c, &t);
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].position_error == b.rows[i].position_error);

  RunConfig wrong = c;
  wrong.model.aggregator = model::AggregatorKind::kConv;
  CHECK_THROWS_AS(Evaluate(wrong, &t), ConfigError);
  RunConfig unset = c;
  unset.model_given = false;
  unset.model = model::ModelConfig::DeskScale();
  CHECK_NOTHROW(Evaluate(unset, &t));

  const fs::path other = TempDir("compat_ds");
  data::GenConfig g = SmallGen();
  g.seed = 99;
  data::GenerateDataset(g, other.string());
  RunConfig elsewhere = c;
  elsewhere.eval.split = EvalSplit::kScenes;
  elsewhere.eval.dataset = other.string();
  CHECK_THROWS_AS(Evaluate(elsewhere, &t), ConfigError);

  RunConfig no_model = c;
  CHECK_THROWS_AS(Evaluate(no_model, nullptr), ConfigError);
}

TEST_CASE("localize") {
  const fs::path dir = TempDir("localize");
  RunConfig c = TinyRun(dir.string());
  c.train.epochs = 1;
  const TrainedModel t = LoadTrainedModel(Train(c, {dir.string(), "", {}}).checkpoint_path);
  const data::Manifest m = data::LoadManifest(Dataset());
  const data::SceneData db = data::LoadScene(m, 1);
  const auto backbone = data::DescriptorBackbone(m);

  const LocalizeResult a = Localize(t, backbone, db, db.images[7]);
  CHECK(a.ref == 7);
  CHECK(a.similarity == doctest::Approx(1.0).epsilon(1e-6));
  const Eigen::Matrix3d& R = a.pose.R.matrix();
  CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() <= 1e-9);
  CHECK(std::abs(R.determinant() - 1.0) <= 1e-9);
  const LocalizeResult b = Localize(t, backbone, db, db.images[7]);
  CHECK(a.pose.x == b.pose.x);
  CHECK(a.pose.R.matrix() == b.pose.R.matrix());

  data::SceneData empty;
  empty.index = data::DescriptorIndex(db.index.dim());
  CHECK_THROWS_AS(Localize(t, backbone, empty, db.images[0]), InvalidInput);
}

TEST_CASE("ablate writes one merged row per combination") {
  const fs::path dir = TempDir("ablate");
  RunConfig c = TinyRun(dir.string());
  c.train.epochs = 1;
  c.eval.split = EvalSplit::kTrainPairs;
  c.ablate.aggregators = {model::AggregatorKind::kTransformer, model::AggregatorKind::kBaseline};
  c.ablate.rotations = {model::RotationKind::kQuaternion, model::RotationKind::kSixD};
  c.ablate.seeds = {1};
  const auto rows = Ablate(c);
  REQUIRE(rows.size() == 4);
  std::string expected = AblateCsvHeader();
  for (const auto& r : rows) {
    CHECK(r.steps == 2);
    CHECK(std::isfinite(r.median_rotation));
    CHECK(r.identity_position == rows[0].identity_position);
    expected += AblateCsvLine(r);
  }
  CHECK(ReadAll(dir / "ablate.csv") == expected);
  CHECK(fs::exists(dir / "baseline_6d_seed1" / "summary.csv"));
}

TEST_CASE("database_views splits each scene into database and queries") {
  RunConfig c = TinyRun(TempDir("dbviews").string());
  c.eval.predictor = Predictor::kIdentity;
  c.eval.database_views = 10;
  const EvalReport r = Evaluate(c, nullptr);
  CHECK(r.rows.size() == 2 * 14);
  const data::Manifest m = data::LoadManifest(Dataset());
  for (const auto& row : r.rows) {
    CHECK(row.query >= 10);
    CHECK(row.ref < 10);
    const data::SceneData scene = data::LoadScene(m, row.scene);
    // No database view is more similar than the chosen one.
    double best = -2.0;
    for (std::size_t v = 0; v < 10; ++v) {
      double sim = 0.0;
      for (std::size_t d = 0; d < scene.index.dim(); ++d) sim += scene.index.descriptor(row.query)[d] * scene.index.descriptor(v)[d];
      best = std::max(best, sim);
    }
    double chosen = 0.0;
    for (std::size_t d = 0; d < scene.index.dim(); ++d) chosen += scene.index.descriptor(row.query)[d] * scene.index.descriptor(row.ref)[d];
    CHECK(chosen == doctest::Approx(best).epsilon(1e-12));
  }
  c.eval.database_views = 24;
  CHECK_THROWS_AS(Evaluate(c, nullptr), ConfigError);
}
