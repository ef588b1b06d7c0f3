#include "livobench/eskf.h"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "livobench/error.h"
#include "livobench/simworld.h"

namespace livobench {

NavState BoxPlus(const NavState& x, const Vec15& dx) {
  NavState out = x;
  out.p += dx.segment<3>(idx::kP);
  out.v += dx.segment<3>(idx::kV);
  out.R = x.R * So3Exp(dx.segment<3>(idx::kTheta));
  out.bg += dx.segment<3>(idx::kBg);
  out.ba += dx.segment<3>(idx::kBa);
  return out;
}

Vec15 BoxMinus(const NavState& a, const NavState& b) {
  Vec15 d;
  d.segment<3>(idx::kP) = a.p - b.p;
  d.segment<3>(idx::kV) = a.v - b.v;
  d.segment<3>(idx::kTheta) = So3Log(b.R.inverse() * a.R);
  d.segment<3>(idx::kBg) = a.bg - b.bg;
  d.segment<3>(idx::kBa) = a.ba - b.ba;
  return d;
}

void Symmetrize(Mat15& P) { P = 0.5 * (P + P.transpose()).eval(); }

void Propagate(NavState& x, Mat15& P, const Vec3& gyro, const Vec3& accel,
               double dt, const ProcessNoise& noise) {
  if (!(dt > 0.0 && dt <= 0.1)) {
    throw Error(ErrorCode::kInvalidDt, "dt=" + std::to_string(dt));
  }
  const Vec3 w = gyro - x.bg;
  const Vec3 f = accel - x.ba;
  const Mat3 R0 = x.R.matrix();
  const Mat3 R_mid = (x.R * So3Exp(0.5 * dt * w)).matrix();
  const Vec3 a_world = R_mid * f + kGravity;

  Mat15 F = Mat15::Identity();
  F.block<3, 3>(idx::kP, idx::kV) = Mat3::Identity() * dt;
  F.block<3, 3>(idx::kV, idx::kTheta) = -R0 * Skew(f) * dt;
  F.block<3, 3>(idx::kV, idx::kBa) = -R0 * dt;
  F.block<3, 3>(idx::kTheta, idx::kTheta) = So3Exp(-w * dt).matrix();
  F.block<3, 3>(idx::kTheta, idx::kBg) = -Mat3::Identity() * dt;

  Vec15 q = Vec15::Zero();
  q.segment<3>(idx::kV).setConstant(noise.accel * noise.accel * dt);
  q.segment<3>(idx::kTheta).setConstant(noise.gyro * noise.gyro * dt);
  q.segment<3>(idx::kBg).setConstant(noise.gyro_bias_walk * noise.gyro_bias_walk * dt);
  q.segment<3>(idx::kBa).setConstant(noise.accel_bias_walk * noise.accel_bias_walk * dt);

  x.p += x.v * dt + 0.5 * a_world * dt * dt;
  x.v += a_world * dt;
  x.R = x.R * So3Exp(w * dt);
  x.t += dt;

  P = F * P * F.transpose();
  P.diagonal() += q;
  Symmetrize(P);
}

UpdateResult IteratedUpdate(const NavState& prior, const Mat15& prior_cov,
                            const NavState& start, const MeasurementModel& model,
                            const IteratedUpdateOptions& options) {
  UpdateResult result{start, prior_cov, 0, UpdateOutcome::kOk};
  NavState x = start;
  // Joseph terms of the last step: K H and K R K^T, both 15 x 15.
  Mat15 KH = Mat15::Zero();
  Mat15 KRKt = Mat15::Zero();
  bool have_gain = false;

  Eigen::LLT<Mat15> prior_llt(prior_cov);
  const bool prior_invertible = prior_llt.info() == Eigen::Success;
  const Mat15 prior_info = prior_invertible ? Mat15(prior_llt.solve(Mat15::Identity())) : Mat15::Zero();

  for (int it = 0; it < std::max(1, options.max_iters); ++it) {
    Linearization lin = model.Evaluate(x);
    if (lin.rows() == 0) {
      if (it == 0) {
        result.outcome = UpdateOutcome::kNoMeasurements;
        return result;
      }
      break;
    }
    const Eigen::Index m = lin.rows();
    const Vec15 d = BoxMinus(x, prior);
    const Eigen::VectorXd innov = lin.residual + lin.jacobian * d;

    Vec15 dx;
    if (m <= 15 || !prior_invertible) {
      Eigen::MatrixXd S = lin.jacobian * prior_cov * lin.jacobian.transpose();
      S.diagonal() += lin.variance;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
          ldlt.vectorD().minCoeff() <= 0.0) {
        result.outcome = UpdateOutcome::kSingularInnovation;
        result.state = start;
        result.cov = prior_cov;
        return result;
      }
      const Eigen::MatrixXd K = (ldlt.solve(lin.jacobian * prior_cov)).transpose();
      dx = -d + K * innov;
      KH = K * lin.jacobian;
      KRKt = K * lin.variance.asDiagonal() * K.transpose();
    } else {
      // Information form: K = (H^T R^-1 H + P^-1)^-1 H^T R^-1.
      const Eigen::VectorXd w = lin.variance.cwiseInverse().cwiseSqrt();
      const Eigen::MatrixXd Hw = w.asDiagonal() * lin.jacobian;
      Mat15 A = Mat15::Zero();
      A.selfadjointView<Eigen::Lower>().rankUpdate(Hw.transpose());
      A = A.selfadjointView<Eigen::Lower>();
      const Vec15 b = Hw.transpose() * w.cwiseProduct(innov);
      Eigen::LLT<Mat15> llt(A + prior_info);
      if (llt.info() != Eigen::Success) {
        result.outcome = UpdateOutcome::kSingularInnovation;
        result.state = start;
        result.cov = prior_cov;
        return result;
      }
      dx = -d + llt.solve(b);
      KH = llt.solve(A);
      KRKt = KH * llt.solve(Mat15::Identity()).transpose();
    }

    x = BoxPlus(x, dx);
    have_gain = true;
    result.iterations = it + 1;
    if (dx.norm() < options.eps) break;
  }

  result.state = x;
  if (options.update_covariance && have_gain) {
    const Mat15 IKH = Mat15::Identity() - KH;
    Mat15 P = IKH * prior_cov * IKH.transpose();
    P += KRKt;
    Symmetrize(P);
    result.cov = P;
  }
  return result;
}

}  // namespace livobench
