#pragma once

#include <Eigen/Core>

#include "livobench/geometry.h"

namespace livobench {

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

/// Error-state layout: (dp, dv, dtheta, dbg, dba). dtheta is a body-frame
/// (right) perturbation: R_true = R * exp(dtheta).
namespace idx {
inline constexpr int kP = 0;
inline constexpr int kV = 3;
inline constexpr int kTheta = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
}  // namespace idx

struct NavState {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Rotation R;
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();

  Pose pose() const { return Pose{R, p}; }
};

/// x [+] dx
NavState BoxPlus(const NavState& x, const Vec15& dx);
/// a [-] b, so that BoxPlus(b, BoxMinus(a, b)) == a.
Vec15 BoxMinus(const NavState& a, const NavState& b);

/// Continuous-time noise densities used by the filter.
struct ProcessNoise {
  double gyro = 2e-3;             // rad/s/sqrt(Hz)
  double accel = 2e-2;            // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1e-5;   // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1e-4;  // m/s^3/sqrt(Hz)
};

/// One propagation step with constant (gyro, accel) over dt. Gravity is
/// fixed at (0, 0, -9.81). The specific force is rotated with the attitude
/// at the middle of the step. Throws kInvalidDt unless 0 < dt <= 0.1.
void Propagate(NavState& x, Mat15& P, const Vec3& gyro, const Vec3& accel,
               double dt, const ProcessNoise& noise);

/// Residual r = z - h(x), H = d h / d dx at x, per-row noise variance.
struct Linearization {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd variance;

  Eigen::Index rows() const { return residual.size(); }
};

class MeasurementModel {
 public:
  virtual ~MeasurementModel() = default;
  /// An empty linearization means no usable measurements at this state.
  virtual Linearization Evaluate(const NavState& x) const = 0;
};

struct IteratedUpdateOptions {
  int max_iters = 5;
  double eps = 1e-6;
  bool update_covariance = true;
};

enum class UpdateOutcome { kOk, kNoMeasurements, kSingularInnovation };

struct UpdateResult {
  NavState state;
  Mat15 cov;
  int iterations = 0;
  UpdateOutcome outcome = UpdateOutcome::kOk;
};

/// Iterated EKF update. `prior` and `prior_cov` anchor the prior term,
/// iteration starts from `start` (normally equal to prior). Each step
/// solves dx = -d + K (r + H d) with d = x_i [-] prior. The covariance is
/// updated once (Joseph form) with the gain of the last linearization.
/// On kNoMeasurements at the first iteration or kSingularInnovation the
/// returned state and covariance are `start` and `prior_cov`.
UpdateResult IteratedUpdate(const NavState& prior, const Mat15& prior_cov,
                            const NavState& start, const MeasurementModel& model,
                            const IteratedUpdateOptions& options = {});

inline UpdateResult IteratedUpdate(const NavState& prior, const Mat15& prior_cov,
                                   const MeasurementModel& model,
                                   const IteratedUpdateOptions& options = {}) {
  return IteratedUpdate(prior, prior_cov, prior, model, options);
}

void Symmetrize(Mat15& P);

}  // namespace livobench
