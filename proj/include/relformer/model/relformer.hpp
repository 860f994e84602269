#pragma once

// Paired feature-map aggregation network for relative pose regression.
//
// Data flow per branch (translation, rotation):
//   backbone endpoint of I1 and I2 -> channel concat -> 1x1 projection to C_h
//   -> row-major flatten, prepend task token -> pre-LN transformer encoder with
//   learned 2D positional encoding re-added before every layer -> token output
//   -> MLP head.
// The aggregator can be swapped for two 3x3 convolutions with global pooling,
// or bypassed entirely by the global-descriptor baseline.
//
// Images are NHWC with values in [0, 1]. The prediction is the relative pose
// that maps I1's pose onto I2's: x2 = x1 + dx, R2 = R1 dR.

#include <cstdint>
#include <vector>

#include "relformer/model/config.hpp"
#include "relformer/model/layers.hpp"

namespace relformer::model {

template <typename T>
struct FeatureMaps {
  Tensor<T> trans;  // [N, H_t, W_t, C_t]
  Tensor<T> rot;    // [N, 2 H_t, 2 W_t, C_r]
  Tensor<T> last;   // final stage activation
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::mt19937_64& rng);

  // Throws ShapeError unless images are [N, S, S, C_in] with S = image_size.
  FeatureMaps<T> Extract(const Tensor<T>& images) const;
  // Global average pool of the final stage: [N, C_last].
  Tensor<T> Pooled(const Tensor<T>& images) const;

  const BackboneConfig& config() const { return config_; }
  ParameterList<T> Parameters() const;

 private:
  BackboneConfig config_;
  std::vector<Conv<T>> stages_;
};

template <typename T>
struct PositionalEncoding {
  Tensor<T> ex;  // [W_f + 1, C_h / 2]
  Tensor<T> ey;  // [H_f + 1, C_h / 2]

  PositionalEncoding() = default;
  PositionalEncoding(std::size_t h, std::size_t w, std::size_t hidden, std::mt19937_64& rng);

  // [h * w + 1, C_h]. Row 0 is the token at (0, 0); row 1 + i * w + j holds
  // [ex[j + 1]; ey[i + 1]]. Throws ShapeError when the tables do not match.
  Tensor<T> Sequence(std::size_t h, std::size_t w) const;
  ParameterList<T> Parameters() const;
};

template <typename T>
struct EncoderLayer {
  Norm<T> attn_norm;
  Linear<T> q, k, v, out;
  Norm<T> mlp_norm;
  Linear<T> mlp_in, mlp_out;
  std::size_t heads = 1;
  double dropout = 0.0;

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& config, std::mt19937_64& rng);

  // x: [N, S, C], pos: [S, C]. Attention probabilities [N * heads, S, S] are
  // appended to `attention` when given.
  Tensor<T> Forward(const Tensor<T>& x, const Tensor<T>& pos, const ForwardContext& ctx,
                    std::vector<Tensor<T>>* attention = nullptr) const;
  ParameterList<T> Parameters() const;
};

template <typename T>
struct Encoder {
  std::vector<EncoderLayer<T>> layers;
  Norm<T> final_norm;

  Encoder() = default;
  Encoder(const EncoderConfig& config, std::mt19937_64& rng);

  // Returns the token row of the last layer's output: [N, C].
  Tensor<T> Forward(const Tensor<T>& sequence, const Tensor<T>& pos, const ForwardContext& ctx,
                    std::vector<Tensor<T>>* attention = nullptr) const;
  ParameterList<T> Parameters() const;
};

// Hidden layer keeps the input width, then a linear map to the target.
template <typename T>
struct Head {
  Linear<T> hidden;
  Linear<T> out;

  Head() = default;
  Head(std::size_t in, std::size_t out_dim, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> Parameters() const;
};

// Two 3x3 conv + relu layers then global average pooling: [N, H, W, C] -> [N, C].
template <typename T>
struct ConvAggregator {
  Conv<T> first, second;

  ConvAggregator() = default;
  ConvAggregator(std::size_t channels, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& paired) const;
  ParameterList<T> Parameters() const;
};

// F1, F2: [N, H, W, C_f] -> [N, H, W, C_h]. Throws ShapeError on mismatch.
template <typename T>
Tensor<T> PairAndProject(const Tensor<T>& f1, const Tensor<T>& f2, const Conv<T>& projection);

template <typename T>
struct Sequence {
  Tensor<T> tokens;  // [N, H * W + 1, C_h]
  Tensor<T> pos;     // [H * W + 1, C_h]
};

// Flattens a paired map row-major (i outer, j inner) and prepends the token.
template <typename T>
Sequence<T> BuildSequence(const Tensor<T>& paired, const Tensor<T>& token, const PositionalEncoding<T>& pos);

template <typename T>
struct Branch {
  Conv<T> projection;
  PositionalEncoding<T> pos;
  Tensor<T> token;  // [1, 1, C_h]
  Encoder<T> encoder;
  ConvAggregator<T> conv;
  Head<T> head;

  ParameterList<T> Parameters(AggregatorKind kind) const;
};

template <typename T>
struct Prediction {
  Tensor<T> dx;   // [N, 3]
  Tensor<T> rot;  // [N, 4 | 6 | 9]
};

template <typename T>
struct ForwardTrace {
  FeatureMaps<T> first, second;
  Tensor<T> trans_paired, rot_paired;
  Tensor<T> trans_latent, rot_latent;  // [N, C_h] (or [N, 2 C_last] for the baseline)
  std::vector<Tensor<T>> trans_attention, rot_attention;
};

template <typename T>
class RelformerModel {
 public:
  RelformerModel() = default;
  // Validates the config; initialization is fully determined by `seed`.
  RelformerModel(const ModelConfig& config, std::uint64_t seed);

  // first, second: [N, S, S, C_in]. Backbone weights are shared.
  Prediction<T> Forward(const Tensor<T>& first, const Tensor<T>& second, const ForwardContext& ctx,
                        ForwardTrace<T>* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const Branch<T>& translation() const { return trans_; }
  const Branch<T>& rotation() const { return rot_; }

  // Names are stable and used as checkpoint keys. Only parameters used by the
  // configured aggregator are listed.
  ParameterList<T> Parameters() const;

 private:
  Tensor<T> Aggregate(const Branch<T>& branch, const Tensor<T>& f1, const Tensor<T>& f2, const ForwardContext& ctx,
                      Tensor<T>* paired, std::vector<Tensor<T>>* attention) const;

  ModelConfig config_;
  Backbone<T> backbone_;
  Branch<T> trans_;
  Branch<T> rot_;
};

}  // namespace relformer::model
