#include "relformer/model/config.hpp"

#include <algorithm>

#include "relformer/errors.hpp"
#include "relformer/json_util.hpp"

namespace relformer::model {

using json::Read;
using json::RejectUnknownKeys;

std::size_t RotationDim(RotationKind kind) {
  switch (kind) {
    case RotationKind::kQuaternion: return 4;
    case RotationKind::kSixD: return 6;
    case RotationKind::kNineD: return 9;
  }
  return 0;
}

std::string ToString(RotationKind kind) {
  switch (kind) {
    case RotationKind::kQuaternion: return "quat";
    case RotationKind::kSixD: return "6d";
    case RotationKind::kNineD: return "9d";
  }
  return "?";
}

std::string ToString(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kTransformer: return "transformer";
    case AggregatorKind::kConv: return "conv";
    case AggregatorKind::kBaseline: return "baseline";
  }
  return "?";
}

RotationKind ParseRotationKind(const std::string& s) {
  if (s == "quat") return RotationKind::kQuaternion;
  if (s == "6d") return RotationKind::kSixD;
  if (s == "9d") return RotationKind::kNineD;
  throw ConfigError("unknown rotation kind '" + s + "' (expected quat, 6d or 9d)");
}

AggregatorKind ParseAggregatorKind(const std::string& s) {
  if (s == "transformer") return AggregatorKind::kTransformer;
  if (s == "conv") return AggregatorKind::kConv;
  if (s == "baseline") return AggregatorKind::kBaseline;
  throw ConfigError("unknown aggregator '" + s + "' (expected transformer, conv or baseline)");
}

std::size_t BackboneConfig::Resolution(std::size_t stage) const {
  std::size_t side = image_size;
  for (std::size_t i = 0; i < stage; ++i) {
    // 3x3 kernel, padding 1.
    side = (side + 2 - 3) / stages.at(i).stride + 1;
  }
  return side;
}

ModelConfig ModelConfig::DeskScale() { return ModelConfig{}; }

ModelConfig ModelConfig::FullScale() {
  ModelConfig c;
  c.backbone.image_size = 224;
  c.backbone.stages = {{16, 2}, {24, 2}, {40, 2}, {112, 2}};
  c.backbone.trans_endpoint = 4;
  c.backbone.rot_endpoint = 3;
  c.encoder = {6, 8, 512, 2048, 0.1};
  return c;
}

void ModelConfig::Validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  const BackboneConfig& b = backbone;
  if (b.image_size < 8 || b.image_size > 1024) fail("image_size must be in [8, 1024]");
  if (b.in_channels == 0 || b.in_channels > 8) fail("in_channels must be in [1, 8]");
  if (b.stages.empty() || b.stages.size() > 8) fail("backbone needs 1 to 8 stages");
  for (const auto& s : b.stages) {
    if (s.channels == 0 || s.channels > 2048) fail("stage channels must be in [1, 2048]");
    if (s.stride == 0 || s.stride > 4) fail("stage stride must be in [1, 4]");
  }
  const std::size_t n = b.stages.size();
  if (b.trans_endpoint < 1 || b.trans_endpoint > n) fail("trans_endpoint out of range");
  if (b.rot_endpoint < 1 || b.rot_endpoint > n) fail("rot_endpoint out of range");
  if (b.Resolution(n) < 1) fail("input too small for the backbone strides");
  if (b.Resolution(b.rot_endpoint) != 2 * b.Resolution(b.trans_endpoint)) {
    fail("rotation endpoint resolution must be twice the translation endpoint resolution (got " +
         std::to_string(b.Resolution(b.rot_endpoint)) + " and " + std::to_string(b.Resolution(b.trans_endpoint)) + ")");
  }
  const EncoderConfig& e = encoder;
  if (e.hidden < 2 || e.hidden > 4096 || e.hidden % 2 != 0) fail("hidden (C_h) must be even and in [2, 4096]");
  if (e.heads == 0 || e.hidden % e.heads != 0) fail("hidden must be divisible by heads");
  if (e.layers == 0 || e.layers > 24) fail("layers must be in [1, 24]");
  if (e.mlp_dim == 0 || e.mlp_dim > 16384) fail("mlp_dim must be in [1, 16384]");
  if (!(e.dropout >= 0.0 && e.dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(std::abs(init_s_dx) < 50.0) || !(std::abs(init_s_rot) < 50.0)) fail("loss weight init must be finite, |s| < 50");
}

nlohmann::json ToJson(const ModelConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.backbone.stages) stages.push_back({{"channels", s.channels}, {"stride", s.stride}});
  return {
      {"backbone",
       {{"image_size", c.backbone.image_size},
        {"in_channels", c.backbone.in_channels},
        {"stages", stages},
        {"trans_endpoint", c.backbone.trans_endpoint},
        {"rot_endpoint", c.backbone.rot_endpoint}}},
      {"encoder",
       {{"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"hidden", c.encoder.hidden},
        {"mlp_dim", c.encoder.mlp_dim},
        {"dropout", c.encoder.dropout}}},
      {"rotation", ToString(c.rotation)},
      {"aggregator", ToString(c.aggregator)},
      {"init_s_dx", c.init_s_dx},
      {"init_s_rot", c.init_s_rot},
  };
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  RejectUnknownKeys(j, {"backbone", "encoder", "rotation", "aggregator", "init_s_dx", "init_s_rot"}, "model");
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    RejectUnknownKeys(b, {"image_size", "in_channels", "stages", "trans_endpoint", "rot_endpoint"}, "model.backbone");
    Read(b, "image_size", c.backbone.image_size, "model.backbone");
    Read(b, "in_channels", c.backbone.in_channels, "model.backbone");
    Read(b, "trans_endpoint", c.backbone.trans_endpoint, "model.backbone");
    Read(b, "rot_endpoint", c.backbone.rot_endpoint, "model.backbone");
    if (b.contains("stages")) {
      if (!b.at("stages").is_array()) throw ConfigError("model.backbone.stages: expected an array");
      c.backbone.stages.clear();
      for (const auto& s : b.at("stages")) {
        RejectUnknownKeys(s, {"channels", "stride"}, "model.backbone.stages[]");
        BackboneStage stage;
        Read(s, "channels", stage.channels, "model.backbone.stages[]");
        Read(s, "stride", stage.stride, "model.backbone.stages[]");
        c.backbone.stages.push_back(stage);
      }
    }
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    RejectUnknownKeys(e, {"layers", "heads", "hidden", "mlp_dim", "dropout"}, "model.encoder");
    Read(e, "layers", c.encoder.layers, "model.encoder");
    Read(e, "heads", c.encoder.heads, "model.encoder");
    Read(e, "hidden", c.encoder.hidden, "model.encoder");
    Read(e, "mlp_dim", c.encoder.mlp_dim, "model.encoder");
    Read(e, "dropout", c.encoder.dropout, "model.encoder");
  }
  std::string rot = ToString(c.rotation), agg = ToString(c.aggregator);
  Read(j, "rotation", rot, "model");
  Read(j, "aggregator", agg, "model");
  c.rotation = ParseRotationKind(rot);
  c.aggregator = ParseAggregatorKind(agg);
  Read(j, "init_s_dx", c.init_s_dx, "model");
  Read(j, "init_s_rot", c.init_s_rot, "model");
  c.Validate();
  return c;
}

std::uint64_t ConfigHash(const ModelConfig& config) {
  return json::Fnv1a(ToJson(config).dump());
}

}  // namespace relformer::model
