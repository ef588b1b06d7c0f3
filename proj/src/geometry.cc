#include "livobench/geometry.h"

#include <cmath>
#include <numbers>

#include "livobench/error.h"

namespace livobench {

Mat3 Skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return s;
}

Rotation So3Exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-8) {
    // Second-order series; renormalized by the constructor.
    const Vec3 half = 0.5 * w;
    return Rotation(1.0 - theta * theta / 8.0, half.x(), half.y(), half.z());
  }
  const double s = std::sin(0.5 * theta) / theta;
  return Rotation(std::cos(0.5 * theta), s * w.x(), s * w.y(), s * w.z());
}

Vec3 So3Log(const Rotation& r) {
  Eigen::Quaterniond q = r.quaternion();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double vn = v.norm();
  if (vn < 1e-10) {
    // atan2(vn, w) ~ vn / w near identity.
    return (2.0 / q.w()) * v;
  }
  const double theta = 2.0 * std::atan2(vn, q.w());
  return (theta / vn) * v;
}

double AngleBetween(const Rotation& a, const Rotation& b) {
  return So3Log(a.inverse() * b).norm();
}

double Yaw(const Rotation& r) {
  const Mat3 m = r.matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

Pose Compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose Inverse(const Pose& p) {
  const Rotation inv = p.rotation.inverse();
  return {inv, -(inv * p.translation)};
}

Vec3 Transform(const Pose& p, const Vec3& x) {
  return p.rotation * x + p.translation;
}

void CameraIntrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    throw Error(ErrorCode::kInvalidArgument,
                "principal point must lie inside the image");
  }
}

Vec2 Project(const CameraIntrinsics& k, const Vec3& p_cam) {
  if (p_cam.z() <= 1e-6) {
    throw Error(ErrorCode::kBehindCamera, "point has z <= 1e-6");
  }
  return {k.fx * p_cam.x() / p_cam.z() + k.cx,
          k.fy * p_cam.y() / p_cam.z() + k.cy};
}

Vec3 Backproject(const CameraIntrinsics& k, const Vec2& uv, double depth) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "depth must be positive");
  }
  return {(uv.x() - k.cx) * depth / k.fx, (uv.y() - k.cy) * depth / k.fy,
          depth};
}

Eigen::Matrix<double, 2, 3> ProjectionJacobian(const CameraIntrinsics& k,
                                               const Vec3& p) {
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * p.x() * iz2,
       0.0, k.fy * iz, -k.fy * p.y() * iz2;
  return j;
}

}  // namespace livobench
