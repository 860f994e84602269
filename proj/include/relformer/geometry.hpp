#pragma once

// Exact SO(3)/SE(3) helpers in double precision: rotation parameterizations,
// orthogonalization, pose composition and error metrics.
//
// Conventions:
//   * Pose.x is the camera position in the world frame and Pose.R maps camera
//     axes to world axes. Composition is x2 = x1 + dx, R2 = R1 * dR.
//   * SixD stores the first two columns of a rotation matrix, column 1 first.
//   * NineD stores a 3x3 matrix row-major.
//   * Quaternions are (w, x, y, z) with w >= 0 after canonicalization.

#include <array>

#include <Eigen/Core>

namespace relformer::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kRotationTolerance = 1e-6;

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  // Validates orthonormality and det = +1 within kRotationTolerance.
  explicit Rotation(const Mat3& m);

  // Skips validation. Only for matrices produced by an orthogonalizer.
  static Rotation FromTrusted(const Mat3& m);

  static Rotation Identity() { return Rotation(); }
  static Rotation AboutX(double radians);
  static Rotation AboutY(double radians);
  static Rotation AboutZ(double radians);

  const Mat3& matrix() const { return m_; }
  Rotation Transpose() const { return FromTrusted(m_.transpose()); }
  Rotation operator*(const Rotation& other) const { return FromTrusted(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  // ||R^T R - I||_F and |det R - 1|.
  double OrthogonalityResidual() const;
  double DeterminantResidual() const;

 private:
  struct Trusted {};
  Rotation(const Mat3& m, Trusted) : m_(m) {}
  Mat3 m_;
};

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double Norm() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
};

using SixD = std::array<double, 6>;
using NineD = std::array<double, 9>;

struct Pose {
  Vec3 x = Vec3::Zero();
  Rotation R;
};

struct RelativePose {
  Vec3 dx = Vec3::Zero();
  Rotation dR;
};

// Normalizes internally when the norm is off by more than 1e-6.
// Throws InvalidInput on a zero-norm quaternion.
Rotation QuatToMatrix(const Quaternion& q);

// Returns the w >= 0 representative; ties at w == 0 make the first nonzero
// component of (x, y, z) positive.
Quaternion MatrixToQuat(const Rotation& R);
Quaternion CanonicalizeHemisphere(const Quaternion& q);

// Gram-Schmidt. Throws DegenerateInput when the first vector is ~0 or the
// second is parallel to the first.
Rotation SixdToMatrix(const SixD& v);
SixD MatrixToSixd(const Rotation& R);

// SVD projection onto SO(3). Throws DegenerateInput when sigma_min < 1e-12.
Rotation NinedToMatrix(const NineD& v);
NineD MatrixToNined(const Rotation& R);

// Geodesic distance in degrees, in [0, 180].
double AngularErrorDeg(const Rotation& a, const Rotation& b);

RelativePose ComputeRelativePose(const Pose& p1, const Pose& p2);
Pose RecoverPose(const Pose& p1, const RelativePose& d);

// Unchecked 3x3 orthogonalizers used on raw network outputs.
Mat3 GramSchmidt(const Vec3& a1, const Vec3& a2);
Mat3 SvdProject(const Mat3& m);

}  // namespace relformer::geometry
