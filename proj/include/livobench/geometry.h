#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace livobench {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion rotation, Hamilton convention, stored (w, x, y, z).
/// Every constructor renormalizes, so the norm never drifts.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) {
    // Already-unit inputs are kept bit-exact so serialization roundtrips.
    if (std::abs(q_.squaredNorm() - 1.0) > 1e-15) q_.normalize();
  }
  Rotation(double w, double x, double y, double z)
      : Rotation(Eigen::Quaterniond(w, x, y, z)) {}

  static Rotation FromMatrix(const Mat3& m) {
    return Rotation(Eigen::Quaterniond(m));
  }

  const Eigen::Quaterniond& quaternion() const { return q_; }
  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  Rotation inverse() const { return Rotation(q_.conjugate()); }

  Vec3 operator*(const Vec3& v) const { return q_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }

 private:
  Eigen::Quaterniond q_;
};

Mat3 Skew(const Vec3& w);

/// Exponential map so(3) -> SO(3).
Rotation So3Exp(const Vec3& w);
/// Logarithm, returning the rotation vector with angle in [0, pi].
Vec3 So3Log(const Rotation& r);

/// Angle of the relative rotation between a and b, radians.
double AngleBetween(const Rotation& a, const Rotation& b);

/// Yaw (z component of the ZYX Euler decomposition), radians.
double Yaw(const Rotation& r);

/// Rigid transform x -> R x + t. Interpreted as T_a_b (maps b coordinates into a).
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return {}; }
};

Pose Compose(const Pose& a, const Pose& b);
Pose Inverse(const Pose& p);
Vec3 Transform(const Pose& p, const Vec3& x);

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws kInvalidArgument unless fx, fy > 0 and the principal point lies
  /// inside the image.
  void Validate() const;
};

/// Pinhole projection. Throws kBehindCamera when z <= 1e-6.
Vec2 Project(const CameraIntrinsics& k, const Vec3& p_cam);

/// Inverse of Project at a given depth. Throws kNonPositiveDepth.
Vec3 Backproject(const CameraIntrinsics& k, const Vec2& uv, double depth);

/// d(project)/d(p_cam), 2x3.
Eigen::Matrix<double, 2, 3> ProjectionJacobian(const CameraIntrinsics& k,
                                               const Vec3& p_cam);

inline bool InImage(const CameraIntrinsics& k, const Vec2& uv) {
  return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < k.width &&
         uv.y() < k.height;
}

}  // namespace livobench
