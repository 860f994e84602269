#include "relformer/pipeline/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "relformer/json_util.hpp"
#include "relformer/pipeline/batch.hpp"
#include "relformer/seed.hpp"

namespace relformer::pipeline {

namespace {

std::string Join(const std::string& a, const std::string& b) { return (std::filesystem::path(a) / b).string(); }

// Norm of the gradients under each top-level name ("backbone", "trans", ...).
std::map<std::string, double> GradNorms(const diff::ParameterList<float>& params) {
  std::map<std::string, double> sq;
  for (const auto& [name, t] : params) {
    double s = 0.0;
    if (t.has_grad()) {
      for (float g : t.grad()) s += static_cast<double>(g) * g;
    }
    sq[name.substr(0, name.find('.'))] += s;
  }
  for (auto& [k, v] : sq) v = std::sqrt(v);
  return sq;
}

[[noreturn]] void NumericFailure(const std::string& what, std::uint64_t step, double lr,
                                 const diff::ParameterList<float>& params) {
  std::string msg = what + " at step " + std::to_string(step) + " (lr " + std::to_string(lr) + "); grad norms:";
  for (const auto& [k, v] : GradNorms(params)) msg += " " + k + "=" + std::to_string(v);
  throw NumericError(msg);
}

std::string RngState(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

}  // namespace

std::string LossCsvHeader() { return "step,epoch,loss,l_dx,l_rot,s_dx,s_rot\n"; }

std::string LossCsvLine(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%llu,%.9g,%.17g,%.17g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step),
                static_cast<unsigned long long>(r.epoch), static_cast<double>(r.loss), r.l_dx, r.l_rot,
                static_cast<double>(r.s_dx), static_cast<double>(r.s_rot));
  return buf;
}

TrainResult Train(const RunConfig& config, const TrainOptions& options) {
  config.Validate();
  const TrainConfig& tc = config.train;
  const model::ModelConfig& mc = config.model;
  if (options.out_dir.empty()) throw ConfigError("train: an output directory is required");

  TrainingData data = LoadTrainingData(tc, config.seed);
  if (data.manifest.image_size != mc.backbone.image_size) {
    throw ConfigError("train: dataset images are " + std::to_string(data.manifest.image_size) + " px, the model expects " +
                      std::to_string(mc.backbone.image_size));
  }
  data::EnsureDirectory(options.out_dir);

  model::RelformerModel<float> net(mc, DeriveSeed(config.seed, seed_stream::kModel));
  objective::LossParams<float> loss_params(mc.init_s_dx, mc.init_s_rot);
  diff::ParameterList<float> params = net.Parameters();
  params.Append("loss.", loss_params.Parameters());
  diff::AdamConfig adam_cfg;
  adam_cfg.lr = tc.lr;
  adam_cfg.weight_decay = tc.weight_decay;
  diff::AdamState<float> adam = diff::MakeAdamState(params, adam_cfg);
  std::mt19937_64 rng(DeriveSeed(config.seed, seed_stream::kTraining));

  Checkpoint ckpt;
  ckpt.model = mc;
  ckpt.config_hash = model::ConfigHash(mc);
  ckpt.dataset_hash = data.manifest.hash;
  ckpt.seed = config.seed;
  ckpt.augment = tc.augment;
  ckpt.rescale = tc.rescale;

  std::uint64_t step = 0, epoch = 0;
  if (!options.resume.empty()) {
    const Checkpoint prev = LoadCheckpoint(options.resume);
    if (prev.config_hash != ckpt.config_hash) {
      throw ConfigError("resume: checkpoint config hash " + json::HexHash(prev.config_hash) + " differs from the run's " +
                        json::HexHash(ckpt.config_hash));
    }
    if (prev.dataset_hash != ckpt.dataset_hash) throw ConfigError("resume: checkpoint was trained on a different dataset");
    RestoreParameters(prev, params, &adam);
    adam.config = adam_cfg;
    step = prev.step;
    epoch = prev.epoch;
    std::istringstream s(prev.rng_state);
    s >> rng;
    if (!s) throw IoError(options.resume + ": bad RNG state");
  }

  TrainResult result;
  result.log_path = Join(options.out_dir, "loss.csv");
  std::ofstream log(result.log_path, options.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + result.log_path);
  if (options.resume.empty()) log << LossCsvHeader();

  const Preprocess prep{tc.augment, tc.rescale};
  const std::size_t size = mc.backbone.image_size;
  const model::ForwardContext ctx{true, &rng};
  auto save = [&](const std::string& name) {
    ckpt.step = step;
    ckpt.epoch = epoch;
    ckpt.rng_state = RngState(rng);
    CaptureParameters(params, adam, ckpt);
    const std::string path = Join(options.out_dir, name);
    SaveCheckpoint(path, ckpt);
    return path;
  };
  auto done = [&] { return tc.max_steps > 0 && step >= tc.max_steps; };

  while (epoch < tc.epochs && !done()) {
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t start = 0;
    for (; start < order.size() && !done(); start += tc.batch_size) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      std::vector<data::Image> first, second;
      std::vector<objective::PoseTarget> targets;
      for (std::size_t b = 0; b < n; ++b) {
        const Sample& s = data.samples[order[start + b]];
        const data::SceneData& scene = data.scenes[s.scene];
        std::uniform_int_distribution<std::size_t> pick(0, s.pool.size() - 1);
        const std::size_t ref = s.pool[pick(rng)];
        first.push_back(PrepareImage(scene.images[ref], size, prep, &rng));
        second.push_back(PrepareImage(scene.images[s.query], size, prep, &rng));
        targets.push_back(PairTarget(scene, s.query, ref, mc.rotation));
      }
      params.ZeroGrad();
      const auto pred = net.Forward(StackImages(first), StackImages(second), ctx);
      auto loss = objective::PoseLoss(pred, objective::StackTargets<float>(targets, mc.rotation), loss_params);
      const float value = loss.total.item();
      if (!std::isfinite(value)) NumericFailure("non-finite loss", step + 1, tc.lr, params);
      loss.total.Backward();
      for (const auto& [group, norm] : GradNorms(params)) {
        if (!std::isfinite(norm)) NumericFailure("non-finite gradient in " + group, step + 1, tc.lr, params);
      }
      diff::AdamStep(params, adam);
      ++step;
      const LossRecord rec{step, epoch, value, loss.l_dx, loss.l_rot, loss_params.s_dx.item(), loss_params.s_rot.item()};
      log << LossCsvLine(rec);
      result.log.push_back(rec);
      if (options.on_step) options.on_step(rec);
    }
    if (start < order.size()) break;  // stopped mid-epoch by max_steps
    ++epoch;
    log.flush();
    if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04llu.ckpt", static_cast<unsigned long long>(epoch));
      save(name);
    }
  }
  log.flush();
  if (!log) throw IoError("write failed: " + result.log_path);
  result.checkpoint_path = save("final.ckpt");
  result.checkpoint = ckpt;
  return result;
}

}  // namespace relformer::pipeline
