#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "relformer/errors.hpp"
#include "relformer/geometry.hpp"
#include "test_support.hpp"

using namespace relformer;
using namespace relformer::geometry;
using relformer::testing::RandomPose;
using relformer::testing::RandomRotation;

namespace {

constexpr double kPi = std::numbers::pi;
const double kHalfSqrt2 = std::sqrt(0.5);

Mat3 RotZ90() {
  Mat3 m;
  m << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  return m;
}

void CheckValid(const Rotation& r) {
  CHECK(r.OrthogonalityResidual() < 1e-9);
  CHECK(r.DeterminantResidual() < 1e-9);
}

}  // namespace

TEST_CASE("Rotation rejects non-orthonormal matrices") {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 2.0;
  CHECK_THROWS_AS(Rotation{m}, InvalidInput);
  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;
  CHECK_THROWS_AS(Rotation{reflection}, InvalidInput);
  CHECK_NOTHROW(Rotation{RotZ90()});
}

TEST_CASE("quat_to_matrix examples") {
  CHECK((QuatToMatrix({1, 0, 0, 0}).matrix() - Mat3::Identity()).norm() == 0.0);
  // Closed form with w = z = 1/sqrt(2): m00 = w^2 - z^2 = 0, m01 = -2wz = -1, m10 = 2wz = 1.
  const Rotation r = QuatToMatrix({kHalfSqrt2, 0, 0, kHalfSqrt2});
  CHECK((r.matrix() - RotZ90()).norm() < 1e-12);
  CHECK_THROWS_AS(QuatToMatrix({0, 0, 0, 0}), InvalidInput);
  // Unnormalized input is normalized internally.
  CHECK((QuatToMatrix({2, 0, 0, 2}).matrix() - RotZ90()).norm() < 1e-12);
}

TEST_CASE("quat_to_matrix is antipodally symmetric") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Quaternion q{n(rng), n(rng), n(rng), n(rng)};
    const double s = q.Norm();
    q = {q.w / s, q.x / s, q.y / s, q.z / s};
    const Rotation a = QuatToMatrix(q);
    const Rotation b = QuatToMatrix(-q);
    CHECK((a.matrix() - b.matrix()).norm() == 0.0);
    CheckValid(a);
  }
}

TEST_CASE("matrix_to_quat examples and round trip") {
  const Quaternion id = MatrixToQuat(Rotation::Identity());
  CHECK(id.w == 1.0);
  CHECK(id.x == 0.0);
  const Quaternion q = MatrixToQuat(Rotation(RotZ90()));
  CHECK(q.w == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(q.x == doctest::Approx(0.0));
  CHECK(q.y == doctest::Approx(0.0));
  CHECK(q.z == doctest::Approx(0.70710678).epsilon(1e-8));

  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = RandomRotation(rng);
    const Quaternion qq = MatrixToQuat(r);
    CHECK(qq.w >= 0.0);
    CHECK(std::abs(qq.Norm() - 1.0) < 1e-9);
    const Rotation back = QuatToMatrix(qq);
    CHECK((back.matrix() - r.matrix()).norm() < 1e-8);
  }
}

TEST_CASE("matrix_to_quat rejects drifted input") {
  Mat3 m = Mat3::Identity();
  m(0, 1) = 1e-3;
  CHECK_THROWS_AS(MatrixToQuat(Rotation::FromTrusted(m)), InvalidInput);
}

TEST_CASE("hemisphere canonicalization tie-break") {
  // 180 degrees about z: w = 0, first nonzero component must become positive.
  const Quaternion q = MatrixToQuat(Rotation::AboutZ(kPi));
  CHECK(q.w == doctest::Approx(0.0));
  CHECK(q.z == doctest::Approx(1.0));
  const Quaternion c = CanonicalizeHemisphere({0.0, 0.0, -0.6, 0.8});
  CHECK(c.y == 0.6);
  CHECK(c.z == -0.8);
}

TEST_CASE("sixd_to_matrix examples") {
  CHECK((SixdToMatrix({1, 0, 0, 0, 1, 0}).matrix() - Mat3::Identity()).norm() == 0.0);
  CHECK((SixdToMatrix({1, 0, 0, 1, 1, 0}).matrix() - Mat3::Identity()).norm() < 1e-15);
  CHECK((SixdToMatrix({2, 0, 0, 0, 3, 0}).matrix() - Mat3::Identity()).norm() < 1e-15);
  CHECK_THROWS_AS(SixdToMatrix({0, 0, 0, 0, 1, 0}), DegenerateInput);
  CHECK_THROWS_AS(SixdToMatrix({1, 0, 0, 2, 0, 0}), DegenerateInput);
  CHECK_THROWS_AS(SixdToMatrix({1e-13, 0, 0, 0, 1, 0}), DegenerateInput);
}

TEST_CASE("matrix_to_sixd examples and round trip") {
  const SixD id = MatrixToSixd(Rotation::Identity());
  CHECK(id == SixD{1, 0, 0, 0, 1, 0});
  const SixD rz = MatrixToSixd(Rotation(RotZ90()));
  CHECK(rz == SixD{0, 1, 0, -1, 0, 0});

  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = RandomRotation(rng);
    CHECK((SixdToMatrix(MatrixToSixd(r)).matrix() - r.matrix()).norm() < 1e-9);
    SixD raw;
    for (double& v : raw) v = n(rng);
    CheckValid(SixdToMatrix(raw));
  }
}

TEST_CASE("nined_to_matrix examples") {
  CHECK((NinedToMatrix({1, 0, 0, 0, 1, 0, 0, 0, 1}).matrix() - Mat3::Identity()).norm() < 1e-15);
  CHECK((NinedToMatrix({2, 0, 0, 0, 2, 0, 0, 0, 2}).matrix() - Mat3::Identity()).norm() < 1e-15);
  CHECK_THROWS_AS(NinedToMatrix({1, 0, 0, 0, 1, 0, 0, 0, 0}), DegenerateInput);

  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = RandomRotation(rng);
    CHECK((NinedToMatrix(MatrixToNined(r)).matrix() - r.matrix()).norm() < 1e-9);
    NineD raw;
    for (double& v : raw) v = n(rng);
    CheckValid(NinedToMatrix(raw));
  }
}

TEST_CASE("nined_to_matrix repairs reflections") {
  // diag(1, 1, -1) has det -1; the nearest rotation flips the smallest axis.
  const Rotation r = NinedToMatrix({1, 0, 0, 0, 2, 0, 0, 0, -0.5});
  CheckValid(r);
  CHECK(r.matrix()(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("angular_error examples") {
  std::mt19937_64 rng(15);
  const Rotation r = RandomRotation(rng);
  CHECK(AngularErrorDeg(r, r) < 1e-5);
  CHECK(AngularErrorDeg(Rotation::Identity(), Rotation::AboutZ(kPi / 2)) == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(AngularErrorDeg(Rotation::Identity(), Rotation::AboutX(kPi)) == doctest::Approx(180.0).epsilon(1e-12));
}

TEST_CASE("angular_error is symmetric and satisfies the triangle inequality") {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 1000; ++i) {
    const Rotation a = RandomRotation(rng), b = RandomRotation(rng), c = RandomRotation(rng);
    const double ab = AngularErrorDeg(a, b);
    CHECK(ab == AngularErrorDeg(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 180.0);
    CHECK(AngularErrorDeg(a, c) <= ab + AngularErrorDeg(b, c) + 1e-9);
  }
}

TEST_CASE("relative_pose examples") {
  std::mt19937_64 rng(17);
  const Pose p = RandomPose(rng);
  const RelativePose self = ComputeRelativePose(p, p);
  CHECK(self.dx.norm() == 0.0);
  CHECK((self.dR.matrix() - Mat3::Identity()).norm() < 1e-15);

  const Pose q = RandomPose(rng);
  const RelativePose from_origin = ComputeRelativePose(Pose{}, q);
  CHECK((from_origin.dx - q.x).norm() == 0.0);
  CHECK((from_origin.dR.matrix() - q.R.matrix()).norm() == 0.0);

  const Pose p1{Vec3(1, 0, 0), Rotation::AboutZ(kPi / 2)};
  const Pose p2{Vec3(1, 1, 0), Rotation::AboutZ(kPi / 2)};
  const RelativePose d = ComputeRelativePose(p1, p2);
  CHECK((d.dx - Vec3(0, 1, 0)).norm() == 0.0);
  CHECK((d.dR.matrix() - Mat3::Identity()).norm() < 1e-15);
}

TEST_CASE("recover_pose inverts relative_pose") {
  std::mt19937_64 rng(18);
  const Pose p = RandomPose(rng);
  const Pose same = RecoverPose(p, RelativePose{});
  CHECK((same.x - p.x).norm() == 0.0);
  CHECK((same.R.matrix() - p.R.matrix()).norm() == 0.0);

  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose a = RandomPose(rng), b = RandomPose(rng);
    const Pose back = RecoverPose(a, ComputeRelativePose(a, b));
    worst = std::max({worst, (back.x - b.x).cwiseAbs().maxCoeff(), (back.R.matrix() - b.R.matrix()).cwiseAbs().maxCoeff()});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("6D path is continuous where the canonical quaternion path jumps") {
  const double delta = 1e-3;
  double max_sixd = 0.0, max_quat = 0.0;
  SixD prev_s = MatrixToSixd(Rotation::AboutZ(0.0));
  Quaternion prev_q = MatrixToQuat(Rotation::AboutZ(0.0));
  for (double theta = delta; theta <= 2 * kPi + 1e-12; theta += delta) {
    const Rotation r = Rotation::AboutZ(theta);
    const SixD s = MatrixToSixd(r);
    const Quaternion q = MatrixToQuat(r);
    double ds = 0.0;
    for (int i = 0; i < 6; ++i) ds += (s[i] - prev_s[i]) * (s[i] - prev_s[i]);
    const double dq = std::sqrt((q.w - prev_q.w) * (q.w - prev_q.w) + (q.x - prev_q.x) * (q.x - prev_q.x) +
                                (q.y - prev_q.y) * (q.y - prev_q.y) + (q.z - prev_q.z) * (q.z - prev_q.z));
    max_sixd = std::max(max_sixd, std::sqrt(ds));
    max_quat = std::max(max_quat, dq);
    prev_s = s;
    prev_q = q;
  }
  CHECK(max_sixd <= 2 * delta);
  CHECK(max_quat > 1.0);
}
