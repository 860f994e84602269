#pragma once

// Learned-weight relative pose loss:
//   L = L_dx * exp(-s_dx) + s_dx + L_rot * exp(-s_rot) + s_rot
// with L_dx, L_rot the L1 norms of prediction minus ground truth, evaluated
// per sample and averaged over the batch. The rotation term compares raw
// parameter vectors; orthogonalization happens only at recovery time.

#include <span>
#include <vector>

#include "relformer/geometry.hpp"
#include "relformer/model/config.hpp"
#include "relformer/model/relformer.hpp"

namespace relformer::objective {

using diff::Tensor;
using model::RotationKind;

template <typename T>
struct LossParams {
  Tensor<T> s_dx;   // scalar
  Tensor<T> s_rot;  // scalar

  LossParams() : LossParams(0.0, -3.0) {}
  LossParams(double s_dx0, double s_rot0);
  diff::ParameterList<T> Parameters() const;
};

struct PoseTarget {
  geometry::Vec3 dx = geometry::Vec3::Zero();
  std::vector<double> rot;  // 4, 6 or 9 values
};

// Ground truth for predicting the pose of p2 from p1. Quaternion targets are
// hemisphere-canonicalized; 9D targets are the row-major matrix.
PoseTarget MakeTarget(const geometry::Pose& p1, const geometry::Pose& p2, RotationKind kind);

// Parameter vector of a rotation for the given kind.
std::vector<double> EncodeRotation(const geometry::Rotation& r, RotationKind kind);
// Inverse of the network's rotation output: normalize (quat), Gram-Schmidt
// (6D) or SVD projection (9D). Throws on degenerate outputs.
geometry::Rotation DecodeRotation(std::span<const double> raw, RotationKind kind);

template <typename T>
struct TargetBatch {
  Tensor<T> dx;   // [N, 3]
  Tensor<T> rot;  // [N, k]
};

// Throws InvalidInput when targets disagree with `kind`'s dimension.
template <typename T>
TargetBatch<T> StackTargets(const std::vector<PoseTarget>& targets, RotationKind kind);

template <typename T>
struct LossValue {
  Tensor<T> total;  // scalar, differentiable
  double l_dx = 0.0;   // batch mean of per-sample L1 translation error
  double l_rot = 0.0;  // batch mean of per-sample L1 rotation error
};

// Throws ShapeError when prediction and target dimensions differ.
template <typename T>
LossValue<T> PoseLoss(const model::Prediction<T>& pred, const TargetBatch<T>& gt, const LossParams<T>& params);

// Scalar reference for the loss, used as a test oracle and in reports.
double PoseLossClosedForm(double l_dx, double l_rot, double s_dx, double s_rot);

}  // namespace relformer::objective
