#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "relformer/diff/adam.hpp"
#include "relformer/diff/gradcheck.hpp"
#include "relformer/errors.hpp"
#include "relformer/objective.hpp"
#include "test_support.hpp"

using namespace relformer;
using namespace relformer::objective;
using diff::Tensor;
using model::Prediction;

namespace {

// Prediction whose per-sample L1 errors are exactly (l_dx, l_rot) against a
// zero target.
Prediction<double> PredictionWithErrors(double l_dx, double l_rot) {
  return {Tensor<double>::FromData({1, 3}, {l_dx, 0.0, 0.0}, true),
          Tensor<double>::FromData({1, 6}, {0.0, 0.0, l_rot, 0.0, 0.0, 0.0}, true)};
}

TargetBatch<double> ZeroTarget() {
  return {Tensor<double>::Zeros({1, 3}), Tensor<double>::Zeros({1, 6})};
}

}  // namespace

TEST_CASE("pose_loss examples") {
  const LossParams<double> zero(0.0, 0.0);
  CHECK(PoseLoss(PredictionWithErrors(1.0, 2.0), ZeroTarget(), zero).total.item() == doctest::Approx(3.0).epsilon(1e-15));

  const LossParams<double> half(std::log(2.0), 0.0);
  const double v = PoseLoss(PredictionWithErrors(1.0, 2.0), ZeroTarget(), half).total.item();
  // 1 * exp(-ln 2) + ln 2 + 2 * exp(0) + 0
  CHECK(v == doctest::Approx(3.1931471805599454).epsilon(1e-12));
  CHECK(v == doctest::Approx(PoseLossClosedForm(1.0, 2.0, std::log(2.0), 0.0)).epsilon(1e-15));
}

TEST_CASE("d loss / d s_dx = 1 - L exp(-s), zero at s = ln L") {
  for (double s : {-1.0, 0.0, 0.7, std::log(1.5)}) {
    const LossParams<double> p(s, 0.2);
    auto loss = PoseLoss(PredictionWithErrors(1.5, 0.8), ZeroTarget(), p);
    loss.total.Backward();
    const double expected = 1.0 - 1.5 * std::exp(-s);
    CHECK(p.s_dx.grad()[0] == doctest::Approx(expected).epsilon(1e-12));
  }
  const LossParams<double> p(std::log(1.5), 0.2);
  PoseLoss(PredictionWithErrors(1.5, 0.8), ZeroTarget(), p).total.Backward();
  CHECK(std::abs(p.s_dx.grad()[0]) < 1e-15);

  // Finite differences on both s and the predictions.
  const Prediction<double> pred = PredictionWithErrors(1.3, -0.7);
  const LossParams<double> q(0.3, -0.4);
  const auto r = diff::CheckGradients([&] { return PoseLoss(pred, ZeroTarget(), q).total; },
                                      {pred.dx, pred.rot, q.s_dx, q.s_rot}, 1e-5);
  CHECK(r.max_relative_error < 1e-7);
}

TEST_CASE("graph matches closed form on random batches") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t batch = 1 + rng() % 6;
    std::vector<double> p3(batch * 3), g3(batch * 3), p6(batch * 6), g6(batch * 6);
    for (auto* v : {&p3, &g3, &p6, &g6}) {
      for (auto& x : *v) x = n(rng);
    }
    double ldx = 0.0, lrot = 0.0;
    for (std::size_t i = 0; i < p3.size(); ++i) ldx += std::abs(p3[i] - g3[i]);
    for (std::size_t i = 0; i < p6.size(); ++i) lrot += std::abs(p6[i] - g6[i]);
    ldx /= batch;
    lrot /= batch;
    const double s1 = n(rng), s2 = n(rng);
    const LossParams<double> params(s1, s2);
    const auto value = PoseLoss<double>({Tensor<double>::FromData({batch, 3}, p3), Tensor<double>::FromData({batch, 6}, p6)},
                                        {Tensor<double>::FromData({batch, 3}, g3), Tensor<double>::FromData({batch, 6}, g6)},
                                        params);
    CHECK(std::abs(value.total.item() - PoseLossClosedForm(ldx, lrot, s1, s2)) < 1e-6);
    CHECK(value.l_dx == doctest::Approx(ldx));
  }
}

TEST_CASE("gradient descent on s alone reaches ln L") {
  const double l_dx = 2.5, l_rot = 0.04;
  const LossParams<double> p(0.0, -3.0);
  diff::ParameterList<double> params = p.Parameters();
  diff::AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  auto state = diff::MakeAdamState(params, cfg);
  const auto pred = PredictionWithErrors(l_dx, l_rot);
  for (int step = 0; step < 3000; ++step) {
    params.ZeroGrad();
    PoseLoss(pred, ZeroTarget(), p).total.Backward();
    diff::AdamStep(params, state);
  }
  CHECK(std::abs(p.s_dx.item() - std::log(l_dx)) < 1e-3);
  CHECK(std::abs(p.s_rot.item() - std::log(l_rot)) < 1e-3);
}

TEST_CASE("doubling translation errors adds L_dx exp(-s_dx)") {
  const LossParams<double> p(0.4, -1.0);
  const double base = PoseLoss(PredictionWithErrors(0.6, 0.3), ZeroTarget(), p).total.item();
  const double doubled = PoseLoss(PredictionWithErrors(1.2, 0.3), ZeroTarget(), p).total.item();
  CHECK(doubled - base == doctest::Approx(0.6 * std::exp(-0.4)).epsilon(1e-12));
}

TEST_CASE("pose_loss rejects mismatched dimensions") {
  const LossParams<double> p;
  const Prediction<double> quat{Tensor<double>::Zeros({1, 3}), Tensor<double>::Zeros({1, 4})};
  CHECK_THROWS_AS(PoseLoss(quat, ZeroTarget(), p), ShapeError);
  CHECK_THROWS_AS(StackTargets<double>({{geometry::Vec3::Zero(), {1, 0, 0, 0}}}, model::RotationKind::kSixD), InvalidInput);
}

TEST_CASE("make_target examples") {
  std::mt19937_64 rng(32);
  const geometry::Pose p = relformer::testing::RandomPose(rng);
  const PoseTarget six = MakeTarget(p, p, model::RotationKind::kSixD);
  CHECK(six.dx.norm() == 0.0);
  const std::vector<double> id6{1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(std::abs(six.rot[i] - id6[i]) < 1e-15);
  const PoseTarget quat = MakeTarget(p, p, model::RotationKind::kQuaternion);
  CHECK(quat.rot[0] == doctest::Approx(1.0));
  for (int i = 1; i < 4; ++i) CHECK(std::abs(quat.rot[i]) < 1e-15);

  for (int i = 0; i < 200; ++i) {
    const geometry::Pose a = relformer::testing::RandomPose(rng), b = relformer::testing::RandomPose(rng);
    const geometry::RelativePose rel = geometry::ComputeRelativePose(a, b);
    for (auto kind : {model::RotationKind::kQuaternion, model::RotationKind::kSixD, model::RotationKind::kNineD}) {
      const PoseTarget t = MakeTarget(a, b, kind);
      CHECK((t.dx - (b.x - a.x)).norm() == 0.0);
      CHECK((DecodeRotation(t.rot, kind).matrix() - rel.dR.matrix()).norm() < 1e-9);
    }
    CHECK(MakeTarget(a, b, model::RotationKind::kQuaternion).rot[0] >= 0.0);
  }
}

TEST_CASE("decode_rotation validates its input") {
  CHECK_THROWS_AS(DecodeRotation(std::vector<double>{1, 0, 0}, model::RotationKind::kQuaternion), InvalidInput);
  CHECK_THROWS_AS(DecodeRotation(std::vector<double>{0, 0, 0, 0, 0, 0}, model::RotationKind::kSixD), DegenerateInput);
  // Raw quaternion outputs are normalized, not canonicalized.
  const auto r = DecodeRotation(std::vector<double>{-2, 0, 0, 0}, model::RotationKind::kQuaternion);
  CHECK((r.matrix() - geometry::Mat3::Identity()).norm() < 1e-15);
}
