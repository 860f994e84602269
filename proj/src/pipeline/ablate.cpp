#include "relformer/pipeline/ablate.hpp"

#include <cstdio>
#include <filesystem>

#include "relformer/data/storage.hpp"
#include "relformer/pipeline/train.hpp"

namespace relformer::pipeline {

std::string AblateCsvHeader() {
  return "seed,aggregator,rotation,steps,final_loss,median_position_m,median_rotation_deg,identity_position_m,"
         "identity_rotation_deg\n";
}

std::string AblateCsvLine(const AblateRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%s,%s,%llu,%.9g,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed),
                model::ToString(r.aggregator).c_str(), model::ToString(r.rotation).c_str(),
                static_cast<unsigned long long>(r.steps), r.final_loss, r.median_position, r.median_rotation,
                r.identity_position, r.identity_rotation);
  return buf;
}

std::vector<AblateRow> Ablate(const RunConfig& config, const std::function<void(const std::string&)>& progress) {
  config.Validate();
  data::EnsureDirectory(config.out);
  std::vector<AblateRow> rows;
  std::string csv = AblateCsvHeader();
  for (std::uint64_t seed : config.ablate.seeds) {
    for (auto agg : config.ablate.aggregators) {
      for (auto rot : config.ablate.rotations) {
        RunConfig run = config;
        run.seed = seed;
        run.model.aggregator = agg;
        run.model.rotation = rot;
        run.model_given = true;
        run.eval.predictor = Predictor::kModel;
        run.Validate();
        const std::string name = model::ToString(agg) + "_" + model::ToString(rot) + "_seed" + std::to_string(seed);
        const std::string dir = (std::filesystem::path(config.out) / name).string();
        if (progress) progress(name);

        const TrainResult trained = Train(run, {dir, "", {}});
        const TrainedModel net = LoadTrainedModel(trained.checkpoint_path);
        const EvalReport report = Evaluate(run, &net);
        WriteEvalReport(report, dir);
        RunConfig identity = run;
        identity.eval.predictor = Predictor::kIdentity;
        const EvalReport base = Evaluate(identity, nullptr);

        AblateRow row{seed, agg, rot, trained.checkpoint.step,
                      trained.log.empty() ? 0.0 : static_cast<double>(trained.log.back().loss),
                      report.mean_median_position, report.mean_median_rotation, base.mean_median_position,
                      base.mean_median_rotation};
        rows.push_back(row);
        csv += AblateCsvLine(row);
        data::WriteTextFile((std::filesystem::path(config.out) / "ablate.csv").string(), csv);
      }
    }
  }
  return rows;
}

}  // namespace relformer::pipeline
