#include "relformer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "relformer/errors.hpp"

namespace relformer::geometry {

namespace {

constexpr double kDegenerate = 1e-12;

}  // namespace

Rotation::Rotation(const Mat3& m) : m_(m) {
  const double orth = OrthogonalityResidual();
  const double det = DeterminantResidual();
  if (!(orth < kRotationTolerance) || !(det < kRotationTolerance)) {
    std::ostringstream msg;
    msg << "not a rotation matrix: ||R^T R - I||_F = " << orth
        << ", |det R - 1| = " << det;
    throw InvalidInput(msg.str());
  }
}

Rotation Rotation::FromTrusted(const Mat3& m) { return Rotation(m, Trusted{}); }

Rotation Rotation::AboutX(double radians) {
  return FromTrusted(Eigen::AngleAxisd(radians, Vec3::UnitX()).toRotationMatrix());
}

Rotation Rotation::AboutY(double radians) {
  return FromTrusted(Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix());
}

Rotation Rotation::AboutZ(double radians) {
  return FromTrusted(Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix());
}

double Rotation::OrthogonalityResidual() const {
  return (m_.transpose() * m_ - Mat3::Identity()).norm();
}

double Rotation::DeterminantResidual() const { return std::abs(m_.determinant() - 1.0); }

double Quaternion::Norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Rotation QuatToMatrix(const Quaternion& q_in) {
  const double n = q_in.Norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw InvalidInput("QuatToMatrix: zero-norm or non-finite quaternion");
  }
  Quaternion q = q_in;
  if (std::abs(n - 1.0) > 1e-6) {
    q = {q.w / n, q.x / n, q.y / n, q.z / n};
  }
  // Only pairwise products appear, so q and -q give bit-identical matrices.
  const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  Mat3 m;
  m << ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy),
      2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx),
      2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz;
  return Rotation::FromTrusted(m);
}

Quaternion CanonicalizeHemisphere(const Quaternion& q) {
  if (q.w > 0.0) return q;
  if (q.w < 0.0) return -q;
  for (double c : {q.x, q.y, q.z}) {
    if (c > 0.0) return q;
    if (c < 0.0) return -q;
  }
  return q;
}

Quaternion MatrixToQuat(const Rotation& R) {
  if (!(R.OrthogonalityResidual() < kRotationTolerance) ||
      !(R.DeterminantResidual() < kRotationTolerance)) {
    throw InvalidInput("MatrixToQuat: input is not orthonormal");
  }
  const Mat3& m = R.matrix();
  // Shepperd: branch on the largest of (trace, m00, m11, m22).
  const double tr = m.trace();
  Quaternion q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s};
  }
  const double n = q.Norm();
  q = {q.w / n, q.x / n, q.y / n, q.z / n};
  return CanonicalizeHemisphere(q);
}

Mat3 GramSchmidt(const Vec3& a1, const Vec3& a2) {
  const double n1 = a1.norm();
  if (!(n1 >= kDegenerate)) {
    throw DegenerateInput("Gram-Schmidt: first column has norm < 1e-12");
  }
  const Vec3 c1 = a1 / n1;
  const Vec3 residual = a2 - a2.dot(c1) * c1;
  const double n2 = residual.norm();
  if (!(n2 >= kDegenerate * std::max(1.0, a2.norm()))) {
    throw DegenerateInput("Gram-Schmidt: second column is parallel to the first");
  }
  const Vec3 c2 = residual / n2;
  Mat3 m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c1.cross(c2);
  return m;
}

Rotation SixdToMatrix(const SixD& v) {
  return Rotation::FromTrusted(GramSchmidt(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])));
}

SixD MatrixToSixd(const Rotation& R) {
  const Mat3& m = R.matrix();
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Mat3 SvdProject(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sigma = svd.singularValues();
  if (!(sigma.minCoeff() >= kDegenerate)) {
    throw DegenerateInput("SVD orthogonalization: matrix is rank deficient");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

Rotation NinedToMatrix(const NineD& v) {
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return Rotation::FromTrusted(SvdProject(m));
}

NineD MatrixToNined(const Rotation& R) {
  const Mat3& m = R.matrix();
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2)};
}

double AngularErrorDeg(const Rotation& a, const Rotation& b) {
  // trace(A^T B) as an elementwise sum keeps the metric exactly symmetric.
  double trace = 0.0;
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) trace += a.matrix()(i, j) * b.matrix()(i, j);
  }
  const double c = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

RelativePose ComputeRelativePose(const Pose& p1, const Pose& p2) {
  return {p2.x - p1.x, p1.R.Transpose() * p2.R};
}

Pose RecoverPose(const Pose& p1, const RelativePose& d) { return {p1.x + d.dx, p1.R * d.dR}; }

}  // namespace relformer::geometry
