#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "relformer/diff/gradcheck.hpp"
#include "relformer/errors.hpp"
#include "relformer/model/relformer.hpp"
#include "relformer/objective.hpp"

using namespace relformer;
using namespace relformer::model;
using diff::Shape;

namespace {

template <typename T>
Tensor<T> RandomTensor(const Shape& shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(diff::NumElements(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::FromData(shape, std::move(v));
}

ModelConfig TinyConfig() {
  ModelConfig c;
  c.backbone.image_size = 16;
  c.backbone.stages = {{4, 2}, {6, 2}, {8, 2}};
  c.backbone.trans_endpoint = 3;
  c.backbone.rot_endpoint = 2;
  c.encoder = {1, 2, 8, 16, 0.1};
  return c;
}

std::vector<float> Values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(ModelConfig::DeskScale().Validate());
  CHECK_NOTHROW(ModelConfig::FullScale().Validate());
  ModelConfig c;
  c.encoder.heads = 3;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
  c = ModelConfig{};
  c.backbone.rot_endpoint = 2;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
  c = ModelConfig{};
  c.encoder.hidden = 127;
  c.encoder.heads = 1;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
}

TEST_CASE("config json round trip and strictness") {
  ModelConfig c = ModelConfig::FullScale();
  c.rotation = RotationKind::kNineD;
  c.aggregator = AggregatorKind::kConv;
  const ModelConfig back = ModelConfigFromJson(ToJson(c));
  CHECK(ToJson(back) == ToJson(c));
  CHECK(ConfigHash(back) == ConfigHash(c));
  CHECK(ConfigHash(back) != ConfigHash(ModelConfig::DeskScale()));

  nlohmann::json j = ToJson(c);
  j["encoder"]["depth"] = 3;
  CHECK_THROWS_AS(ModelConfigFromJson(j), ConfigError);
  CHECK_THROWS_AS(ModelConfigFromJson(nlohmann::json{{"rotation", "euler"}}), ConfigError);
  CHECK(ModelConfigFromJson(nlohmann::json::object()).encoder.hidden == 128);
}

TEST_CASE("extract_features: full-scale endpoints") {
  const ModelConfig c = ModelConfig::FullScale();
  CHECK(c.encoder.hidden == 512);
  CHECK(c.encoder.layers == 6);
  CHECK(c.encoder.heads == 8);
  CHECK(c.encoder.mlp_dim == 2048);
  std::mt19937_64 rng(1);
  const Backbone<float> backbone(c.backbone, rng);
  diff::NoGradGuard no_grad;
  const auto maps = backbone.Extract(RandomTensor<float>({1, 224, 224, 3}, rng));
  CHECK(maps.trans.shape() == Shape{1, 14, 14, 112});
  CHECK(maps.rot.shape() == Shape{1, 28, 28, 40});
}

TEST_CASE("extract_features: desk-scale endpoints and siamese determinism") {
  std::mt19937_64 rng(2);
  const Backbone<float> backbone(ModelConfig::DeskScale().backbone, rng);
  const auto img = RandomTensor<float>({2, 64, 64, 3}, rng);
  const auto a = backbone.Extract(img);
  const auto b = backbone.Extract(img.Detach());
  CHECK(a.trans.shape() == Shape{2, 4, 4, 96});
  CHECK(a.rot.shape() == Shape{2, 8, 8, 64});
  CHECK(Values(a.trans) == Values(b.trans));
  CHECK(Values(a.rot) == Values(b.rot));
  CHECK_THROWS_AS(backbone.Extract(RandomTensor<float>({1, 32, 32, 3}, rng)), ShapeError);
  CHECK_THROWS_AS(backbone.Extract(RandomTensor<float>({1, 64, 64, 1}, rng)), ShapeError);
}

TEST_CASE("pair_and_project") {
  std::mt19937_64 rng(3);
  const Conv<float> proj(224, 512, 1, 1, 1.0, rng);
  const auto f1 = RandomTensor<float>({1, 14, 14, 112}, rng);
  const auto f2 = RandomTensor<float>({1, 14, 14, 112}, rng);
  const auto p = PairAndProject(f1, f2, proj);
  CHECK(p.shape() == Shape{1, 14, 14, 512});

  // Random weights are asymmetric across the concat halves.
  const auto swapped = PairAndProject(f2, f1, proj);
  double diff = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) diff = std::max(diff, double(std::abs(p.data()[i] - swapped.data()[i])));
  CHECK(diff > 1e-3);

  Conv<float> zero(8, 5, 1, 1, 1.0, rng);
  std::fill(zero.weight.mutable_data().begin(), zero.weight.mutable_data().end(), 0.f);
  for (std::size_t o = 0; o < 5; ++o) zero.bias.mutable_data()[o] = 0.5f * float(o);
  const auto c = PairAndProject(RandomTensor<float>({2, 3, 3, 4}, rng), RandomTensor<float>({2, 3, 3, 4}, rng), zero);
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c.data()[i] == 0.5f * float(i % 5));

  CHECK_THROWS_AS(PairAndProject(RandomTensor<float>({1, 3, 3, 4}, rng), RandomTensor<float>({1, 2, 3, 4}, rng), zero),
                  ShapeError);
}

TEST_CASE("build_sequence layout") {
  std::mt19937_64 rng(4);
  const PositionalEncoding<float> pe(14, 14, 512, rng);
  CHECK(pe.ex.shape() == Shape{15, 256});
  CHECK(pe.ey.shape() == Shape{15, 256});
  const auto token = Tensor<float>::Zeros({1, 1, 512});
  const auto seq = BuildSequence(RandomTensor<float>({2, 14, 14, 512}, rng), token, pe);
  CHECK(seq.tokens.shape() == Shape{2, 197, 512});
  CHECK(seq.pos.shape() == Shape{197, 512});
  CHECK_THROWS_AS(BuildSequence(RandomTensor<float>({1, 13, 14, 512}, rng), token, pe), ShapeError);

  // Table rows filled with their own index: E_x row j = all j, E_y row i = all 100 + i.
  PositionalEncoding<float> fixed(4, 4, 8, rng);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      fixed.ex.mutable_data()[r * 4 + c] = float(r);
      fixed.ey.mutable_data()[r * 4 + c] = float(100 + r);
    }
  }
  const auto pos = fixed.Sequence(4, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(pos.data()[c] == 0.f);
    CHECK(pos.data()[4 + c] == 100.f);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t row = 1 + i * 4 + j;
      CHECK(pos.data()[row * 8 + 0] == float(j + 1));
      CHECK(pos.data()[row * 8 + 7] == float(100 + i + 1));
    }
  }

  // Random tables: every (i, j) gets a distinct encoding.
  const PositionalEncoding<float> random(4, 4, 8, rng);
  const auto rp = random.Sequence(4, 4);
  std::set<std::vector<float>> rows;
  for (std::size_t r = 0; r < 17; ++r) rows.insert({rp.data().begin() + r * 8, rp.data().begin() + (r + 1) * 8});
  CHECK(rows.size() == 17);
}

TEST_CASE("encoder: attention normalization, output width, eval determinism") {
  std::mt19937_64 rng(5);
  EncoderConfig ec{2, 4, 32, 64, 0.1};
  const Encoder<float> enc(ec, rng);
  for (std::size_t len : {2u, 5u, 17u}) {
    const auto seq = RandomTensor<float>({3, len, 32}, rng, -1, 1);
    const auto pos = RandomTensor<float>({len, 32}, rng, -0.1, 0.1);
    std::vector<Tensor<float>> attention;
    const auto out = enc.Forward(seq, pos, {}, &attention);
    CHECK(out.shape() == Shape{3, 32});
    CHECK(attention.size() == 2);
    for (const auto& a : attention) {
      CHECK(a.shape() == Shape{12, len, len});
      for (std::size_t r = 0; r < a.numel() / len; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += a.data()[r * len + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
    CHECK(Values(out) == Values(enc.Forward(seq, pos, {})));
  }
  EncoderConfig bad{1, 3, 32, 64, 0.0};
  CHECK_THROWS_AS(Encoder<float>(bad, rng), ConfigError);
}

TEST_CASE("encoder: train-mode dropout needs an rng and perturbs outputs") {
  std::mt19937_64 rng(6);
  const Encoder<float> enc({1, 2, 16, 32, 0.5}, rng);
  const auto seq = RandomTensor<float>({1, 5, 16}, rng);
  const auto pos = Tensor<float>::Zeros({5, 16});
  CHECK_THROWS_AS(enc.Forward(seq, pos, {true, nullptr}), InvalidInput);
  std::mt19937_64 drop(7);
  CHECK(Values(enc.Forward(seq, pos, {true, &drop})) != Values(enc.Forward(seq, pos, {})));
}

TEST_CASE("encoder is position-sensitive") {
  std::mt19937_64 rng(8);
  const std::size_t c = 16;
  const Encoder<float> enc({2, 2, c, 32, 0.0}, rng);
  const PositionalEncoding<float> pe(3, 3, c, rng);
  const auto token = RandomTensor<float>({1, 1, c}, rng, -1, 1);
  const auto paired = RandomTensor<float>({1, 3, 3, c}, rng, -1, 1);
  // Reverse the spatial order of the nine positions, keep the encoding fixed.
  const auto flat = diff::Reshape(paired, {9, c});
  std::vector<Tensor<float>> rows;
  for (std::size_t r = 9; r-- > 0;) rows.push_back(diff::Slice(flat, 0, r, 1));
  const auto permuted = diff::Reshape(diff::Concat(rows, 0), {1, 3, 3, c});
  const auto s1 = BuildSequence(paired, token, pe);
  const auto s2 = BuildSequence(permuted, token, pe);
  const auto a = enc.Forward(s1.tokens, s1.pos, {});
  const auto b = enc.Forward(s2.tokens, s2.pos, {});
  double diff = 0.0;
  for (std::size_t i = 0; i < c; ++i) diff = std::max(diff, double(std::abs(a.data()[i] - b.data()[i])));
  CHECK(diff > 1e-6);
}

TEST_CASE("token output is length-invariant over identical rows") {
  std::mt19937_64 rng(9);
  const std::size_t c = 16;
  const Encoder<double> enc({2, 4, c, 32, 0.0}, rng);
  const auto row = RandomTensor<double>({1, 1, c}, rng, -1, 1);
  const auto pos_row = RandomTensor<double>({1, c}, rng, -0.5, 0.5);
  std::vector<double> reference;
  for (std::size_t len : {2u, 3u, 10u, 50u}) {
    const auto seq = diff::BroadcastTo(row, {1, len, c});
    const auto pos = diff::BroadcastTo(pos_row, {len, c});
    const auto out = enc.Forward(seq, pos, {});
    std::vector<double> v(out.data().begin(), out.data().end());
    if (reference.empty()) reference = v;
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(v[i] - reference[i]) < 1e-5);
  }
}

TEST_CASE("regress_head") {
  std::mt19937_64 rng(10);
  const Head<float> rot(512, 6, rng);
  CHECK(rot(RandomTensor<float>({2, 512}, rng)).shape() == Shape{2, 6});
  const Head<float> trans(512, 3, rng);
  CHECK(trans(RandomTensor<float>({1, 512}, rng)).shape() == Shape{1, 3});
  CHECK(rot.hidden.weight.shape() == Shape{512, 512});

  Head<float> fixed(8, 3, rng);
  std::fill(fixed.out.weight.mutable_data().begin(), fixed.out.weight.mutable_data().end(), 0.f);
  fixed.out.bias.mutable_data()[0] = 1.f;
  fixed.out.bias.mutable_data()[1] = -2.f;
  fixed.out.bias.mutable_data()[2] = 0.25f;
  const auto y = fixed(RandomTensor<float>({4, 8}, rng));
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(y.data()[r * 3 + 0] == 1.f);
    CHECK(y.data()[r * 3 + 1] == -2.f);
    CHECK(y.data()[r * 3 + 2] == 0.25f);
  }
}

TEST_CASE("conv aggregator") {
  std::mt19937_64 rng(11);
  const ConvAggregator<float> agg(512, rng);
  CHECK(agg(RandomTensor<float>({1, 14, 14, 512}, rng)).shape() == Shape{1, 512});

  ConvAggregator<float> small(4, rng);
  for (std::size_t o = 0; o < 4; ++o) small.second.bias.mutable_data()[o] = float(o) - 1.f;
  const auto y = small(Tensor<float>::Zeros({2, 3, 3, 4}));
  // First layer outputs relu(0) = 0 everywhere, so only the second bias survives.
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t o = 0; o < 4; ++o) CHECK(y.data()[b * 4 + o] == std::max(0.f, float(o) - 1.f));
  }
}

TEST_CASE("full model forward shapes for every variant") {
  std::mt19937_64 rng(12);
  const auto a = RandomTensor<float>({2, 64, 64, 3}, rng);
  const auto b = RandomTensor<float>({2, 64, 64, 3}, rng);
  for (auto agg : {AggregatorKind::kTransformer, AggregatorKind::kConv, AggregatorKind::kBaseline}) {
    for (auto rot : {RotationKind::kQuaternion, RotationKind::kSixD, RotationKind::kNineD}) {
      ModelConfig c = ModelConfig::DeskScale();
      c.aggregator = agg;
      c.rotation = rot;
      const RelformerModel<float> m(c, 1);
      ForwardTrace<float> trace;
      const auto pred = m.Forward(a, b, {}, &trace);
      CHECK(pred.dx.shape() == Shape{2, 3});
      CHECK(pred.rot.shape() == Shape{2, RotationDim(rot)});
      if (agg == AggregatorKind::kBaseline) {
        CHECK(trace.trans_latent.shape() == Shape{2, 2 * c.backbone.DescriptorDim()});
        CHECK(c.backbone.DescriptorDim() == 96);
      } else {
        CHECK(trace.trans_latent.shape() == Shape{2, 128});
        CHECK(trace.trans_paired.shape() == Shape{2, 4, 4, 128});
        CHECK(trace.rot_paired.shape() == Shape{2, 8, 8, 128});
      }
      if (agg == AggregatorKind::kTransformer) {
        CHECK(trace.rot_attention.front().shape() == Shape{8, 65, 65});
        CHECK(trace.trans_attention.front().shape() == Shape{8, 17, 17});
      }
    }
  }
}

TEST_CASE("siamese backbone and disjoint branch parameters") {
  std::mt19937_64 rng(13);
  const RelformerModel<float> m(ModelConfig::DeskScale(), 3);
  const auto img = RandomTensor<float>({1, 64, 64, 3}, rng);
  ForwardTrace<float> trace;
  m.Forward(img, img, {}, &trace);
  CHECK(Values(trace.first.trans) == Values(trace.second.trans));
  CHECK(Values(trace.first.rot) == Values(trace.second.rot));

  std::set<const void*> trans, rot;
  const auto params = m.Parameters();
  std::set<std::string> names;
  for (const auto& [name, t] : params) {
    CHECK(names.insert(name).second);
    if (name.rfind("trans.", 0) == 0) trans.insert(t.node().get());
    if (name.rfind("rot.", 0) == 0) rot.insert(t.node().get());
  }
  for (const void* p : trans) CHECK(rot.count(p) == 0);
  CHECK(!trans.empty());
}

TEST_CASE("model initialization is seeded") {
  const RelformerModel<float> a(ModelConfig::DeskScale(), 7), b(ModelConfig::DeskScale(), 7), c(ModelConfig::DeskScale(), 8);
  const auto pa = a.Parameters(), pb = b.Parameters(), pc = c.Parameters();
  CHECK(Values(pa[0]) == Values(pb[0]));
  CHECK(Values(pa[0]) != Values(pc[0]));
}

TEST_CASE("full loss graph gradients match finite differences") {
  const ModelConfig config = TinyConfig();
  const RelformerModel<double> m(config, 21);
  const objective::LossParams<double> loss_params(0.1, -0.5);
  std::mt19937_64 rng(22);
  const auto a = RandomTensor<double>({2, 16, 16, 3}, rng);
  const auto b = RandomTensor<double>({2, 16, 16, 3}, rng);
  const auto targets = objective::StackTargets<double>(
      {{geometry::Vec3(0.3, -0.2, 0.1), {0.9, 0.1, -0.2, -0.1, 0.95, 0.05}},
       {geometry::Vec3(-0.4, 0.5, 0.2), {0.8, -0.3, 0.1, 0.2, 0.9, -0.1}}},
      RotationKind::kSixD);
  auto params = m.Parameters();
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, t] : params) inputs.push_back(t);
  inputs.push_back(loss_params.s_dx);
  inputs.push_back(loss_params.s_rot);

  auto loss = [&] { return objective::PoseLoss(m.Forward(a, b, {}), targets, loss_params).total; };
  const auto r = diff::CheckGradients(loss, inputs, 1e-5);
  INFO("max rel err " << r.max_relative_error << " analytic " << r.analytic << " numeric " << r.numeric);
  CHECK(r.max_relative_error < 1e-4);

  // Every parameter gradient is finite.
  for (const auto& t : inputs) {
    for (double g : t.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("single encoder layer gradient check at eps 1e-4") {
  std::mt19937_64 rng(23);
  const EncoderLayer<double> layer({1, 2, 8, 16, 0.0}, rng);
  const auto pos = RandomTensor<double>({5, 8}, rng, -0.3, 0.3);
  const auto w = RandomTensor<double>({2, 5, 8}, rng, -1, 1);
  const auto r = diff::CheckGradients(
      [&](const Tensor<double>& x) { return diff::Sum(diff::Mul(layer.Forward(x, pos, {}), w)); },
      RandomTensor<double>({2, 5, 8}, rng, -1, 1), 1e-4);
  CHECK(r.max_relative_error < 1e-4);
}
