#include "relformer/objective.hpp"

#include <cmath>
#include <string>

#include "relformer/errors.hpp"

namespace relformer::objective {

template <typename T>
LossParams<T>::LossParams(double s_dx0, double s_rot0)
    : s_dx(Tensor<T>::Scalar(static_cast<T>(s_dx0), true)), s_rot(Tensor<T>::Scalar(static_cast<T>(s_rot0), true)) {}

template <typename T>
diff::ParameterList<T> LossParams<T>::Parameters() const {
  diff::ParameterList<T> p;
  p.Add("s_dx", s_dx);
  p.Add("s_rot", s_rot);
  return p;
}

std::vector<double> EncodeRotation(const geometry::Rotation& r, RotationKind kind) {
  switch (kind) {
    case RotationKind::kQuaternion: {
      const geometry::Quaternion q = geometry::MatrixToQuat(r);
      return {q.w, q.x, q.y, q.z};
    }
    case RotationKind::kSixD: {
      const geometry::SixD v = geometry::MatrixToSixd(r);
      return {v.begin(), v.end()};
    }
    case RotationKind::kNineD: {
      const geometry::NineD v = geometry::MatrixToNined(r);
      return {v.begin(), v.end()};
    }
  }
  return {};
}

geometry::Rotation DecodeRotation(std::span<const double> raw, RotationKind kind) {
  if (raw.size() != model::RotationDim(kind)) {
    throw InvalidInput("DecodeRotation: expected " + std::to_string(model::RotationDim(kind)) + " values for " +
                       model::ToString(kind) + ", got " + std::to_string(raw.size()));
  }
  switch (kind) {
    case RotationKind::kQuaternion:
      return geometry::QuatToMatrix({raw[0], raw[1], raw[2], raw[3]});
    case RotationKind::kSixD:
      return geometry::SixdToMatrix({raw[0], raw[1], raw[2], raw[3], raw[4], raw[5]});
    case RotationKind::kNineD:
      return geometry::NinedToMatrix({raw[0], raw[1], raw[2], raw[3], raw[4], raw[5], raw[6], raw[7], raw[8]});
  }
  throw InvalidInput("DecodeRotation: unknown kind");
}

PoseTarget MakeTarget(const geometry::Pose& p1, const geometry::Pose& p2, RotationKind kind) {
  const geometry::RelativePose rel = geometry::ComputeRelativePose(p1, p2);
  return {rel.dx, EncodeRotation(rel.dR, kind)};
}

template <typename T>
TargetBatch<T> StackTargets(const std::vector<PoseTarget>& targets, RotationKind kind) {
  const std::size_t k = model::RotationDim(kind);
  std::vector<T> dx, rot;
  for (const auto& t : targets) {
    if (t.rot.size() != k) {
      throw InvalidInput("StackTargets: target has " + std::to_string(t.rot.size()) + " rotation values, " +
                         model::ToString(kind) + " needs " + std::to_string(k));
    }
    for (int i = 0; i < 3; ++i) dx.push_back(static_cast<T>(t.dx[i]));
    for (double v : t.rot) rot.push_back(static_cast<T>(v));
  }
  return {Tensor<T>::FromData({targets.size(), 3}, std::move(dx)),
          Tensor<T>::FromData({targets.size(), k}, std::move(rot))};
}

template <typename T>
LossValue<T> PoseLoss(const model::Prediction<T>& pred, const TargetBatch<T>& gt, const LossParams<T>& params) {
  if (pred.dx.shape() != gt.dx.shape() || pred.rot.shape() != gt.rot.shape()) {
    throw ShapeError("PoseLoss: prediction " + diff::ShapeString(pred.dx.shape()) + "/" +
                     diff::ShapeString(pred.rot.shape()) + " vs target " + diff::ShapeString(gt.dx.shape()) + "/" +
                     diff::ShapeString(gt.rot.shape()));
  }
  const Tensor<T> l_dx = diff::Mean(diff::L1Distance(pred.dx, gt.dx));
  const Tensor<T> l_rot = diff::Mean(diff::L1Distance(pred.rot, gt.rot));
  const auto weighted = [](const Tensor<T>& l, const Tensor<T>& s) {
    return diff::Add(diff::Mul(l, diff::Exp(diff::Scale(s, T(-1)))), s);
  };
  LossValue<T> out;
  out.total = diff::Add(weighted(l_dx, params.s_dx), weighted(l_rot, params.s_rot));
  out.l_dx = static_cast<double>(l_dx.item());
  out.l_rot = static_cast<double>(l_rot.item());
  return out;
}

double PoseLossClosedForm(double l_dx, double l_rot, double s_dx, double s_rot) {
  return l_dx * std::exp(-s_dx) + s_dx + l_rot * std::exp(-s_rot) + s_rot;
}

template struct LossParams<float>;
template struct LossParams<double>;
template TargetBatch<float> StackTargets<float>(const std::vector<PoseTarget>&, RotationKind);
template TargetBatch<double> StackTargets<double>(const std::vector<PoseTarget>&, RotationKind);
template LossValue<float> PoseLoss<float>(const model::Prediction<float>&, const TargetBatch<float>&,
                                          const LossParams<float>&);
template LossValue<double> PoseLoss<double>(const model::Prediction<double>&, const TargetBatch<double>&,
                                            const LossParams<double>&);

}  // namespace relformer::objective
