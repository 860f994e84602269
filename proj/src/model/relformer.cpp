#include "relformer/model/relformer.hpp"

#include <cmath>
#include <string>

#include "relformer/errors.hpp"

namespace relformer::model {

using diff::Shape;

// Backbone -------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::mt19937_64& rng) : config_(config) {
  std::size_t in = config.in_channels;
  for (const auto& stage : config.stages) {
    // He-style gain for the relu that follows.
    stages_.emplace_back(in, stage.channels, 3, stage.stride, std::sqrt(6.0), rng);
    in = stage.channels;
  }
}

template <typename T>
FeatureMaps<T> Backbone<T>::Extract(const Tensor<T>& images) const {
  const std::size_t s = config_.image_size;
  if (images.rank() != 4 || images.dim(1) != s || images.dim(2) != s || images.dim(3) != config_.in_channels) {
    throw ShapeError("Backbone: expected images of shape (N, " + std::to_string(s) + ", " + std::to_string(s) + ", " +
                     std::to_string(config_.in_channels) + "), got " + diff::ShapeString(images.shape()));
  }
  // Map [0, 1] pixels to roughly zero mean, unit range.
  Tensor<T> x = diff::Scale(diff::Add(images, Tensor<T>::Scalar(T(-0.5))), T(4));
  FeatureMaps<T> maps;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = diff::Relu(stages_[i](x));
    if (i + 1 == config_.trans_endpoint) maps.trans = x;
    if (i + 1 == config_.rot_endpoint) maps.rot = x;
  }
  maps.last = x;
  return maps;
}

template <typename T>
Tensor<T> Backbone<T>::Pooled(const Tensor<T>& images) const {
  return diff::GlobalAvgPool(Extract(images).last);
}

template <typename T>
ParameterList<T> Backbone<T>::Parameters() const {
  ParameterList<T> p;
  for (std::size_t i = 0; i < stages_.size(); ++i) p.Append("stage" + std::to_string(i + 1) + ".", stages_[i].Parameters());
  return p;
}

// Positional encoding ----------------------------------------------------------

template <typename T>
PositionalEncoding<T>::PositionalEncoding(std::size_t h, std::size_t w, std::size_t hidden, std::mt19937_64& rng)
    : ex(init::TruncatedNormal<T>({w + 1, hidden / 2}, 0.02, rng)),
      ey(init::TruncatedNormal<T>({h + 1, hidden / 2}, 0.02, rng)) {}

template <typename T>
Tensor<T> PositionalEncoding<T>::Sequence(std::size_t h, std::size_t w) const {
  if (ex.rank() != 2 || ey.rank() != 2 || ex.dim(0) != w + 1 || ey.dim(0) != h + 1 || ex.dim(1) != ey.dim(1)) {
    throw ShapeError("PositionalEncoding: tables " + diff::ShapeString(ex.shape()) + " / " +
                     diff::ShapeString(ey.shape()) + " do not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                     " map");
  }
  std::vector<std::size_t> xs{0}, ys{0};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      xs.push_back(j + 1);
      ys.push_back(i + 1);
    }
  }
  return diff::Concat<T>({diff::Embedding(ex, xs), diff::Embedding(ey, ys)}, 1);
}

template <typename T>
ParameterList<T> PositionalEncoding<T>::Parameters() const {
  ParameterList<T> p;
  p.Add("ex", ex);
  p.Add("ey", ey);
  return p;
}

// Encoder ----------------------------------------------------------------------

template <typename T>
EncoderLayer<T>::EncoderLayer(const EncoderConfig& c, std::mt19937_64& rng)
    : attn_norm(c.hidden),
      q(c.hidden, c.hidden, rng),
      k(c.hidden, c.hidden, rng),
      v(c.hidden, c.hidden, rng),
      out(c.hidden, c.hidden, rng),
      mlp_norm(c.hidden),
      mlp_in(c.hidden, c.mlp_dim, rng),
      mlp_out(c.mlp_dim, c.hidden, rng),
      heads(c.heads),
      dropout(c.dropout) {
  if (c.heads == 0 || c.hidden % c.heads != 0) {
    throw ConfigError("encoder: hidden " + std::to_string(c.hidden) + " is not divisible by " +
                      std::to_string(c.heads) + " heads");
  }
}

namespace {

template <typename T>
Tensor<T> ApplyDropout(const Tensor<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.train || p == 0.0) return x;
  if (ctx.rng == nullptr) throw InvalidInput("train-mode dropout needs an rng");
  return diff::Dropout(x, p, true, *ctx.rng);
}

// [N, S, C] -> [N * heads, S, C / heads]
template <typename T>
Tensor<T> SplitHeads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t n = x.dim(0), s = x.dim(1), c = x.dim(2), d = c / heads;
  return diff::Reshape(diff::Permute(diff::Reshape(x, {n, s, heads, d}), {0, 2, 1, 3}), {n * heads, s, d});
}

template <typename T>
Tensor<T> MergeHeads(const Tensor<T>& x, std::size_t n, std::size_t heads) {
  const std::size_t s = x.dim(1), d = x.dim(2);
  return diff::Reshape(diff::Permute(diff::Reshape(x, {n, heads, s, d}), {0, 2, 1, 3}), {n, s, heads * d});
}

}  // namespace

template <typename T>
Tensor<T> EncoderLayer<T>::Forward(const Tensor<T>& input, const Tensor<T>& pos, const ForwardContext& ctx,
                                   std::vector<Tensor<T>>* attention) const {
  if (input.rank() != 3 || pos.rank() != 2 || input.dim(1) != pos.dim(0) || input.dim(2) != pos.dim(1)) {
    throw ShapeError("EncoderLayer: sequence " + diff::ShapeString(input.shape()) + " and position encoding " +
                     diff::ShapeString(pos.shape()) + " disagree");
  }
  const std::size_t n = input.dim(0), c = input.dim(2), d = c / heads;
  Tensor<T> x = diff::Add(input, pos);

  const Tensor<T> h = attn_norm(x);
  const Tensor<T> qh = SplitHeads(q(h), heads);
  const Tensor<T> kh = SplitHeads(k(h), heads);
  const Tensor<T> vh = SplitHeads(v(h), heads);
  const Tensor<T> scores = diff::Scale(diff::BatchMatMul(qh, kh, true), T(1) / std::sqrt(static_cast<T>(d)));
  const Tensor<T> probs = diff::Softmax(scores);
  if (attention) attention->push_back(probs);
  const Tensor<T> attended = out(MergeHeads(diff::BatchMatMul(probs, vh), n, heads));
  x = diff::Add(x, ApplyDropout(attended, dropout, ctx));

  const Tensor<T> m = mlp_out(diff::Gelu(mlp_in(mlp_norm(x))));
  return diff::Add(x, ApplyDropout(m, dropout, ctx));
}

template <typename T>
ParameterList<T> EncoderLayer<T>::Parameters() const {
  ParameterList<T> p;
  p.Append("attn_norm.", attn_norm.Parameters());
  p.Append("q.", q.Parameters());
  p.Append("k.", k.Parameters());
  p.Append("v.", v.Parameters());
  p.Append("out.", out.Parameters());
  p.Append("mlp_norm.", mlp_norm.Parameters());
  p.Append("mlp_in.", mlp_in.Parameters());
  p.Append("mlp_out.", mlp_out.Parameters());
  return p;
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& c, std::mt19937_64& rng) : final_norm(c.hidden) {
  for (std::size_t i = 0; i < c.layers; ++i) layers.emplace_back(c, rng);
}

template <typename T>
Tensor<T> Encoder<T>::Forward(const Tensor<T>& sequence, const Tensor<T>& pos, const ForwardContext& ctx,
                              std::vector<Tensor<T>>* attention) const {
  Tensor<T> x = sequence;
  for (const auto& layer : layers) x = layer.Forward(x, pos, ctx, attention);
  const std::size_t n = x.dim(0), c = x.dim(2);
  return diff::Reshape(diff::Slice(final_norm(x), 1, 0, 1), {n, c});
}

template <typename T>
ParameterList<T> Encoder<T>::Parameters() const {
  ParameterList<T> p;
  for (std::size_t i = 0; i < layers.size(); ++i) p.Append("layer" + std::to_string(i) + ".", layers[i].Parameters());
  p.Append("final_norm.", final_norm.Parameters());
  return p;
}

// Heads and aggregators ------------------------------------------------------------

template <typename T>
Head<T>::Head(std::size_t in, std::size_t out_dim, std::mt19937_64& rng) : hidden(in, in, rng), out(in, out_dim, rng) {}

template <typename T>
Tensor<T> Head<T>::operator()(const Tensor<T>& x) const {
  return out(diff::Gelu(hidden(x)));
}

template <typename T>
ParameterList<T> Head<T>::Parameters() const {
  ParameterList<T> p;
  p.Append("hidden.", hidden.Parameters());
  p.Append("out.", out.Parameters());
  return p;
}

template <typename T>
ConvAggregator<T>::ConvAggregator(std::size_t channels, std::mt19937_64& rng)
    : first(channels, channels, 3, 1, std::sqrt(6.0), rng), second(channels, channels, 3, 1, std::sqrt(6.0), rng) {}

template <typename T>
Tensor<T> ConvAggregator<T>::operator()(const Tensor<T>& paired) const {
  return diff::GlobalAvgPool(diff::Relu(second(diff::Relu(first(paired)))));
}

template <typename T>
ParameterList<T> ConvAggregator<T>::Parameters() const {
  ParameterList<T> p;
  p.Append("first.", first.Parameters());
  p.Append("second.", second.Parameters());
  return p;
}

template <typename T>
Tensor<T> PairAndProject(const Tensor<T>& f1, const Tensor<T>& f2, const Conv<T>& projection) {
  if (f1.shape() != f2.shape() || f1.rank() != 4) {
    throw ShapeError("PairAndProject: feature maps " + diff::ShapeString(f1.shape()) + " and " +
                     diff::ShapeString(f2.shape()) + " differ");
  }
  return projection(diff::Concat<T>({f1, f2}, 3));
}

template <typename T>
Sequence<T> BuildSequence(const Tensor<T>& paired, const Tensor<T>& token, const PositionalEncoding<T>& pos) {
  if (paired.rank() != 4) throw ShapeError("BuildSequence: paired map must be NHWC, got " + diff::ShapeString(paired.shape()));
  const std::size_t n = paired.dim(0), h = paired.dim(1), w = paired.dim(2), c = paired.dim(3);
  if (token.shape() != Shape{1, 1, c}) {
    throw ShapeError("BuildSequence: token " + diff::ShapeString(token.shape()) + " does not match width " + std::to_string(c));
  }
  Sequence<T> seq;
  seq.pos = pos.Sequence(h, w);
  if (seq.pos.dim(1) != c) {
    throw ShapeError("BuildSequence: position encoding width " + std::to_string(seq.pos.dim(1)) + " != " + std::to_string(c));
  }
  const Tensor<T> flat = diff::Reshape(paired, {n, h * w, c});
  seq.tokens = diff::Concat<T>({diff::BroadcastTo(token, {n, 1, c}), flat}, 1);
  return seq;
}

template <typename T>
ParameterList<T> Branch<T>::Parameters(AggregatorKind kind) const {
  ParameterList<T> p;
  if (kind != AggregatorKind::kBaseline) p.Append("proj.", projection.Parameters());
  if (kind == AggregatorKind::kTransformer) {
    p.Append("pos.", pos.Parameters());
    p.Add("token", token);
    p.Append("encoder.", encoder.Parameters());
  }
  if (kind == AggregatorKind::kConv) p.Append("conv.", conv.Parameters());
  p.Append("head.", head.Parameters());
  return p;
}

// Full model ---------------------------------------------------------------------

template <typename T>
RelformerModel<T>::RelformerModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.Validate();
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<T>(config_.backbone, rng);
  const BackboneConfig& b = config_.backbone;
  const std::size_t hidden = config_.encoder.hidden;
  const std::size_t head_in = config_.aggregator == AggregatorKind::kBaseline ? 2 * b.DescriptorDim() : hidden;

  auto build = [&](Branch<T>& branch, std::size_t endpoint, std::size_t out_dim) {
    const std::size_t side = b.Resolution(endpoint);
    branch.projection = Conv<T>(2 * b.Channels(endpoint), hidden, 1, 1, 1.0, rng);
    branch.pos = PositionalEncoding<T>(side, side, hidden, rng);
    branch.token = init::TruncatedNormal<T>({1, 1, hidden}, 0.02, rng);
    branch.encoder = Encoder<T>(config_.encoder, rng);
    branch.conv = ConvAggregator<T>(hidden, rng);
    branch.head = Head<T>(head_in, out_dim, rng);
  };
  build(trans_, b.trans_endpoint, 3);
  build(rot_, b.rot_endpoint, RotationDim(config_.rotation));
}

template <typename T>
Tensor<T> RelformerModel<T>::Aggregate(const Branch<T>& branch, const Tensor<T>& f1, const Tensor<T>& f2,
                                       const ForwardContext& ctx, Tensor<T>* paired,
                                       std::vector<Tensor<T>>* attention) const {
  const Tensor<T> p = PairAndProject(f1, f2, branch.projection);
  if (paired) *paired = p;
  if (config_.aggregator == AggregatorKind::kConv) return branch.conv(p);
  const Sequence<T> seq = BuildSequence(p, branch.token, branch.pos);
  return branch.encoder.Forward(seq.tokens, seq.pos, ctx, attention);
}

template <typename T>
Prediction<T> RelformerModel<T>::Forward(const Tensor<T>& first, const Tensor<T>& second, const ForwardContext& ctx,
                                         ForwardTrace<T>* trace) const {
  if (first.shape() != second.shape()) {
    throw ShapeError("RelformerModel: image batches " + diff::ShapeString(first.shape()) + " and " +
                     diff::ShapeString(second.shape()) + " differ");
  }
  const std::size_t n = first.dim(0);
  // One backbone pass over both images keeps the siamese weights literal.
  const FeatureMaps<T> both = backbone_.Extract(diff::Concat<T>({first, second}, 0));
  auto split = [n](const Tensor<T>& t, std::size_t half) { return diff::Slice(t, 0, half * n, n); };

  Prediction<T> pred;
  Tensor<T> trans_latent, rot_latent;
  if (config_.aggregator == AggregatorKind::kBaseline) {
    const Tensor<T> pooled = diff::GlobalAvgPool(both.last);
    trans_latent = rot_latent = diff::Concat<T>({split(pooled, 0), split(pooled, 1)}, 1);
  } else {
    trans_latent = Aggregate(trans_, split(both.trans, 0), split(both.trans, 1), ctx,
                             trace ? &trace->trans_paired : nullptr, trace ? &trace->trans_attention : nullptr);
    rot_latent = Aggregate(rot_, split(both.rot, 0), split(both.rot, 1), ctx, trace ? &trace->rot_paired : nullptr,
                           trace ? &trace->rot_attention : nullptr);
  }
  pred.dx = trans_.head(trans_latent);
  pred.rot = rot_.head(rot_latent);
  if (trace) {
    trace->first = {split(both.trans, 0), split(both.rot, 0), split(both.last, 0)};
    trace->second = {split(both.trans, 1), split(both.rot, 1), split(both.last, 1)};
    trace->trans_latent = trans_latent;
    trace->rot_latent = rot_latent;
  }
  return pred;
}

template <typename T>
ParameterList<T> RelformerModel<T>::Parameters() const {
  ParameterList<T> p;
  p.Append("backbone.", backbone_.Parameters());
  p.Append("trans.", trans_.Parameters(config_.aggregator));
  p.Append("rot.", rot_.Parameters(config_.aggregator));
  return p;
}

#define RELFORMER_INSTANTIATE_MODEL(T)                                                                       \
  template class Backbone<T>;                                                                                \
  template struct PositionalEncoding<T>;                                                                     \
  template struct EncoderLayer<T>;                                                                           \
  template struct Encoder<T>;                                                                                \
  template struct Head<T>;                                                                                   \
  template struct ConvAggregator<T>;                                                                         \
  template struct Branch<T>;                                                                                 \
  template class RelformerModel<T>;                                                                          \
  template Tensor<T> PairAndProject<T>(const Tensor<T>&, const Tensor<T>&, const Conv<T>&);                  \
  template Sequence<T> BuildSequence<T>(const Tensor<T>&, const Tensor<T>&, const PositionalEncoding<T>&);

RELFORMER_INSTANTIATE_MODEL(float)
RELFORMER_INSTANTIATE_MODEL(double)

}  // namespace relformer::model
