#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "relformer/data/dataset.hpp"
#include "relformer/data/storage.hpp"
#include "relformer/errors.hpp"
#include "relformer/json_util.hpp"
#include "relformer/pipeline/ablate.hpp"
#include "relformer/pipeline/evaluate.hpp"
#include "relformer/pipeline/train.hpp"

using namespace relformer;
using namespace relformer::pipeline;

namespace {

constexpr int kValidationExit = 2;
constexpr int kRuntimeExit = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scenes;
  std::string rot;
  std::string agg;
};

void AddCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run configuration (JSON)");
  cmd->add_option("--seed", c.seed, "base seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--scenes", c.scenes, "scene ids, e.g. 0,1,2 or 0-2");
  cmd->add_option("--rot", c.rot, "rotation target: quat, 6d, 9d");
  cmd->add_option("--agg", c.agg, "aggregator: transformer, conv, baseline");
}

// Loads the config file (or defaults) and applies flag overrides. --scenes
// is returned separately since each command applies it to its own section.
RunConfig Resolve(const Common& c, std::optional<std::vector<std::size_t>>& scenes) {
  RunConfig config = c.config.empty() ? RunConfig{} : LoadRunConfig(c.config);
  if (c.seed) {
    config.seed = *c.seed;
    config.gen.seed = *c.seed;
  }
  if (!c.out.empty()) config.out = c.out;
  if (!c.scenes.empty()) scenes = ParseSceneList(c.scenes);
  if (!c.rot.empty()) {
    config.model.rotation = model::ParseRotationKind(c.rot);
    config.model_given = true;
  }
  if (!c.agg.empty()) {
    config.model.aggregator = model::ParseAggregatorKind(c.agg);
    config.model_given = true;
  }
  return config;
}

std::string FormatPose(const geometry::Pose& p) {
  const auto& r = p.R.matrix();
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "position: %.6f %.6f %.6f\n"
                "rotation: %.6f %.6f %.6f\n"
                "          %.6f %.6f %.6f\n"
                "          %.6f %.6f %.6f\n",
                p.x.x(), p.x.y(), p.x.z(), r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1),
                r(2, 2));
  return buf;
}

int RunGen(const Common& opts) {
  std::optional<std::vector<std::size_t>> scenes;
  RunConfig config = Resolve(opts, scenes);
  if (scenes) throw ConfigError("--scenes does not apply to gen");
  config.Validate();
  const data::Manifest m = data::GenerateDataset(config.gen, config.out);
  std::size_t views = 0;
  for (const auto& s : m.scenes) views += s.views;
  std::printf("wrote %zu scenes, %zu views to %s (dataset %s)\n", m.scenes.size(), views, m.root.c_str(),
              json::HexHash(m.hash).c_str());
  return 0;
}

int RunTrain(const Common& opts, const std::string& dataset, const std::string& resume) {
  std::optional<std::vector<std::size_t>> scenes;
  RunConfig config = Resolve(opts, scenes);
  if (scenes) config.train.scenes = *scenes;
  if (!dataset.empty()) config.train.dataset = dataset;
  config.Validate();
  TrainOptions options{config.out, resume, [](const LossRecord& r) {
                         if (r.step % 50 == 0) {
                           std::printf("step %6llu  epoch %4llu  loss %.5f  s_dx %.3f  s_rot %.3f\n",
                                       static_cast<unsigned long long>(r.step), static_cast<unsigned long long>(r.epoch),
                                       r.loss, r.s_dx, r.s_rot);
                           std::fflush(stdout);
                         }
                       }};
  const TrainResult result = Train(config, options);
  std::printf("trained to step %llu; checkpoint %s, loss log %s\n",
              static_cast<unsigned long long>(result.checkpoint.step), result.checkpoint_path.c_str(),
              result.log_path.c_str());
  return 0;
}

int RunEval(const Common& opts, const std::string& checkpoint, const std::string& dataset, const std::string& split,
            const std::string& predictor) {
  std::optional<std::vector<std::size_t>> scenes;
  RunConfig config = Resolve(opts, scenes);
  if (scenes) config.eval.scenes = *scenes;
  if (!dataset.empty()) config.eval.dataset = dataset;
  if (!split.empty()) config.eval.split = ParseEvalSplit(split);
  if (!predictor.empty()) config.eval.predictor = ParsePredictor(predictor);
  config.Validate();
  std::optional<TrainedModel> trained;
  if (config.eval.predictor == Predictor::kModel) {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required for the model predictor");
    trained.emplace(LoadTrainedModel(checkpoint));
  }
  const EvalReport report = Evaluate(config, trained ? &*trained : nullptr);
  WriteEvalReport(report, config.out);
  std::printf("%s", FormatSummaryTable(report).c_str());
  return 0;
}

int RunLocalize(const Common& opts, const std::string& checkpoint, const std::string& dataset,
                const std::string& image) {
  std::optional<std::vector<std::size_t>> scenes;
  RunConfig config = Resolve(opts, scenes);
  if (!scenes || scenes->size() != 1) throw ConfigError("localize: --scenes must name exactly one database scene");
  const TrainedModel trained = LoadTrainedModel(checkpoint);
  const data::Manifest manifest = data::LoadManifest(dataset);
  CheckCompatible(trained, config, manifest);
  const data::SceneData database = data::LoadScene(manifest, scenes->front());
  const LocalizeResult r = Localize(trained, data::DescriptorBackbone(manifest), database, data::LoadImage(image));
  std::printf("reference: %zu (similarity %.6f)\n%s", r.ref, r.similarity, FormatPose(r.pose).c_str());
  return 0;
}

int RunAblate(const Common& opts) {
  std::optional<std::vector<std::size_t>> scenes;
  RunConfig config = Resolve(opts, scenes);
  if (scenes) config.train.scenes = *scenes;
  config.Validate();
  const auto rows = Ablate(config, [](const std::string& name) {
    std::printf("running %s\n", name.c_str());
    std::fflush(stdout);
  });
  std::printf("%-12s %-6s %5s %8s %14s %16s %14s %16s\n", "aggregator", "rot", "seed", "steps", "median pos (m)",
              "median rot (deg)", "identity pos", "identity rot");
  for (const auto& r : rows) {
    std::printf("%-12s %-6s %5llu %8llu %14.4f %16.3f %14.4f %16.3f\n", model::ToString(r.aggregator).c_str(),
                model::ToString(r.rotation).c_str(), static_cast<unsigned long long>(r.seed),
                static_cast<unsigned long long>(r.steps), r.median_position, r.median_rotation, r.identity_position,
                r.identity_rotation);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relformer relative pose regression on synthetic scenes"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, loc_opts, ablate_opts;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  AddCommon(gen, gen_opts);

  auto* train = app.add_subcommand("train", "train a model");
  AddCommon(train, train_opts);
  std::string train_dataset, resume;
  train->add_option("--dataset", train_dataset, "dataset directory");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "median pose errors of a checkpoint");
  AddCommon(eval, eval_opts);
  std::string eval_checkpoint, eval_dataset, split, predictor;
  eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint");
  eval->add_option("--dataset", eval_dataset, "dataset directory");
  eval->add_option("--split", split, "scenes or train_pairs");
  eval->add_option("--predictor", predictor, "model, oracle or identity");

  auto* loc = app.add_subcommand("localize", "absolute pose of one query image");
  AddCommon(loc, loc_opts);
  std::string loc_checkpoint, loc_dataset, image;
  loc->add_option("--checkpoint", loc_checkpoint, "trained checkpoint")->required();
  loc->add_option("--dataset", loc_dataset, "dataset holding the database scene")->required();
  loc->add_option("--image", image, "query image (tensor file)")->required();

  auto* ablate = app.add_subcommand("ablate", "aggregator x rotation grid, merged CSV");
  AddCommon(ablate, ablate_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }

  try {
    if (*gen) return RunGen(gen_opts);
    if (*train) return RunTrain(train_opts, train_dataset, resume);
    if (*eval) return RunEval(eval_opts, eval_checkpoint, eval_dataset, split, predictor);
    if (*loc) return RunLocalize(loc_opts, loc_checkpoint, loc_dataset, image);
    if (*ablate) return RunAblate(ablate_opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kValidationExit;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kValidationExit;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kValidationExit;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kRuntimeExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeExit;
  }
  return 0;
}
