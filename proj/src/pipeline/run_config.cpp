#include "relformer/pipeline/run_config.hpp"

#include <cmath>

#include "relformer/json_util.hpp"

namespace relformer::pipeline {

namespace {

using json::Read;
using json::RejectUnknownKeys;

void Require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool Finite(double v) { return std::isfinite(v); }

}  // namespace

void TrainConfig::Validate() const {
  Require(Finite(lr) && lr > 0.0 && lr <= 1.0, "train.lr must be in (0, 1]");
  Require(Finite(weight_decay) && weight_decay >= 0.0 && weight_decay < 1.0, "train.weight_decay must be in [0, 1)");
  Require(batch_size >= 1 && batch_size <= 1024, "train.batch_size must be in [1, 1024]");
  Require(epochs >= 1 && epochs <= 1000000, "train.epochs must be in [1, 1e6]");
  Require(max_steps <= 100000000, "train.max_steps is too large");
  Require(pair_limit <= 1000000, "train.pair_limit is too large");
  Require(Finite(rescale) && rescale >= 1.0 && rescale <= 2.0, "train.rescale must be in [1, 2]");
}

void EvalConfig::Validate() const { Require(batch_size >= 1 && batch_size <= 1024, "eval.batch_size must be in [1, 1024]"); }

void AblateConfig::Validate() const {
  Require(!aggregators.empty(), "ablate.aggregators must not be empty");
  Require(!rotations.empty(), "ablate.rotations must not be empty");
  Require(!seeds.empty(), "ablate.seeds must not be empty");
}

void RunConfig::Validate() const {
  gen.Validate();
  model.Validate();
  train.Validate();
  eval.Validate();
  ablate.Validate();
  Require(!out.empty(), "out must not be empty");
}

std::string ToString(EvalSplit split) { return split == EvalSplit::kScenes ? "scenes" : "train_pairs"; }

std::string ToString(Predictor p) {
  switch (p) {
    case Predictor::kModel: return "model";
    case Predictor::kOracle: return "oracle";
    case Predictor::kIdentity: return "identity";
  }
  return "?";
}

EvalSplit ParseEvalSplit(const std::string& s) {
  if (s == "scenes") return EvalSplit::kScenes;
  if (s == "train_pairs") return EvalSplit::kTrainPairs;
  throw ConfigError("eval.split: unknown value '" + s + "' (expected scenes or train_pairs)");
}

Predictor ParsePredictor(const std::string& s) {
  if (s == "model") return Predictor::kModel;
  if (s == "oracle") return Predictor::kOracle;
  if (s == "identity") return Predictor::kIdentity;
  throw ConfigError("eval.predictor: unknown value '" + s + "' (expected model, oracle or identity)");
}

nlohmann::json ToJson(const RunConfig& c) {
  nlohmann::json aggs = nlohmann::json::array(), rots = nlohmann::json::array();
  for (auto a : c.ablate.aggregators) aggs.push_back(model::ToString(a));
  for (auto r : c.ablate.rotations) rots.push_back(model::ToString(r));
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"gen", data::ToJson(c.gen)},
      {"model", model::ToJson(c.model)},
      {"train",
       {{"dataset", c.train.dataset},
        {"scenes", c.train.scenes},
        {"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"max_steps", c.train.max_steps},
        {"pair_limit", c.train.pair_limit},
        {"augment", c.train.augment},
        {"rescale", c.train.rescale},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"eval",
       {{"dataset", c.eval.dataset},
        {"scenes", c.eval.scenes},
        {"split", ToString(c.eval.split)},
        {"predictor", ToString(c.eval.predictor)},
        {"batch_size", c.eval.batch_size},
        {"database_views", c.eval.database_views}}},
      {"ablate", {{"aggregators", aggs}, {"rotations", rots}, {"seeds", c.ablate.seeds}}},
  };
}

RunConfig RunConfigFromJson(const nlohmann::json& j) {
  RunConfig c;
  RejectUnknownKeys(j, {"seed", "out", "gen", "model", "train", "eval", "ablate"}, "config");
  Read(j, "seed", c.seed, "config");
  Read(j, "out", c.out, "config");
  c.gen.seed = c.seed;
  if (j.contains("gen")) {
    nlohmann::json g = j.at("gen");
    if (g.is_object() && !g.contains("seed")) g["seed"] = c.seed;
    c.gen = data::GenConfigFromJson(g);
  }
  if (j.contains("model")) {
    c.model = model::ModelConfigFromJson(j.at("model"));
    c.model_given = true;
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    RejectUnknownKeys(t, {"dataset", "scenes", "lr", "weight_decay", "batch_size", "epochs", "max_steps", "pair_limit",
                          "augment", "rescale", "checkpoint_every"},
                      "train");
    Read(t, "dataset", c.train.dataset, "train");
    Read(t, "scenes", c.train.scenes, "train");
    Read(t, "lr", c.train.lr, "train");
    Read(t, "weight_decay", c.train.weight_decay, "train");
    Read(t, "batch_size", c.train.batch_size, "train");
    Read(t, "epochs", c.train.epochs, "train");
    Read(t, "max_steps", c.train.max_steps, "train");
    Read(t, "pair_limit", c.train.pair_limit, "train");
    Read(t, "augment", c.train.augment, "train");
    Read(t, "rescale", c.train.rescale, "train");
    Read(t, "checkpoint_every", c.train.checkpoint_every, "train");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    RejectUnknownKeys(e, {"dataset", "scenes", "split", "predictor", "batch_size", "database_views"}, "eval");
    Read(e, "dataset", c.eval.dataset, "eval");
    Read(e, "scenes", c.eval.scenes, "eval");
    std::string split = ToString(c.eval.split), predictor = ToString(c.eval.predictor);
    Read(e, "split", split, "eval");
    Read(e, "predictor", predictor, "eval");
    c.eval.split = ParseEvalSplit(split);
    c.eval.predictor = ParsePredictor(predictor);
    Read(e, "batch_size", c.eval.batch_size, "eval");
    Read(e, "database_views", c.eval.database_views, "eval");
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    RejectUnknownKeys(a, {"aggregators", "rotations", "seeds"}, "ablate");
    if (a.contains("aggregators")) {
      std::vector<std::string> names;
      Read(a, "aggregators", names, "ablate");
      c.ablate.aggregators.clear();
      for (const auto& n : names) c.ablate.aggregators.push_back(model::ParseAggregatorKind(n));
    }
    if (a.contains("rotations")) {
      std::vector<std::string> names;
      Read(a, "rotations", names, "ablate");
      c.ablate.rotations.clear();
      for (const auto& n : names) c.ablate.rotations.push_back(model::ParseRotationKind(n));
    }
    Read(a, "seeds", c.ablate.seeds, "ablate");
  }
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const std::string& path) { return RunConfigFromJson(json::ParseFile(path)); }

std::vector<std::size_t> ParseSceneList(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  auto number = [&](const std::string& t) -> std::size_t {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("--scenes: bad scene id '" + t + "' in '" + s + "'");
    }
    return std::stoull(t);
  };
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string item = s.substr(pos, comma - pos);
    const std::size_t dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
    } else {
      const std::size_t lo = number(item.substr(0, dash)), hi = number(item.substr(dash + 1));
      if (hi < lo) throw ConfigError("--scenes: empty range '" + item + "'");
      for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace relformer::pipeline
