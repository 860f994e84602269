#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace relformer::model {

enum class RotationKind { kQuaternion, kSixD, kNineD };
enum class AggregatorKind { kTransformer, kConv, kBaseline };

std::size_t RotationDim(RotationKind kind);
std::string ToString(RotationKind kind);
std::string ToString(AggregatorKind kind);
// Accept "quat" | "6d" | "9d" and "transformer" | "conv" | "baseline".
// Throw ConfigError otherwise.
RotationKind ParseRotationKind(const std::string& s);
AggregatorKind ParseAggregatorKind(const std::string& s);

struct BackboneStage {
  std::size_t channels = 16;
  std::size_t stride = 2;
};

// A plain CNN: each stage is a 3x3 convolution followed by relu. Endpoints are
// 1-based stage indices whose activations feed the translation and rotation
// branches.
struct BackboneConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::vector<BackboneStage> stages{{16, 2}, {32, 2}, {64, 2}, {96, 2}};
  std::size_t trans_endpoint = 4;
  std::size_t rot_endpoint = 3;

  // Spatial side length after the given 1-based stage.
  std::size_t Resolution(std::size_t stage) const;
  std::size_t Channels(std::size_t stage) const { return stages.at(stage - 1).channels; }
  std::size_t DescriptorDim() const { return stages.back().channels; }
};

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 128;  // C_h
  std::size_t mlp_dim = 512;
  double dropout = 0.1;
};

struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  RotationKind rotation = RotationKind::kSixD;
  AggregatorKind aggregator = AggregatorKind::kTransformer;
  // Initial values of the learned loss weights.
  double init_s_dx = 0.0;
  double init_s_rot = -3.0;

  // CPU-trainable default: 64x64 input, endpoints 4x4x96 and 8x8x64.
  static ModelConfig DeskScale();
  // 224x224 input with 14x14x112 / 28x28x40 endpoints, C_h = 512, six layers,
  // eight heads, MLP 2048.
  static ModelConfig FullScale();

  // Throws ConfigError describing the first violated constraint.
  void Validate() const;
};

nlohmann::json ToJson(const ModelConfig& config);
// Rejects unknown keys; missing keys keep their defaults. Validates.
ModelConfig ModelConfigFromJson(const nlohmann::json& j);

// Stable 64-bit FNV-1a hash of the canonical JSON dump.
std::uint64_t ConfigHash(const ModelConfig& config);

}  // namespace relformer::model
