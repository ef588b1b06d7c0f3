#include "livobench/vio.h"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "livobench/error.h"
#include "livobench/random.h"

namespace livobench {

// ---------------------------------------------------------------------------
// Photometric model

PhotometricModel::PhotometricModel(std::vector<PhotometricTarget> targets,
                                   const ImageSampler& sampler, double level_scale,
                                   const CameraIntrinsics& k, const Pose& T_imu_cam,
                                   const PhotometricParams& params)
    : targets_(std::move(targets)),
      sampler_(sampler),
      level_scale_(level_scale),
      k_(k),
      T_ic_(T_imu_cam),
      params_(params) {}

Linearization PhotometricModel::Evaluate(const NavState& x) const {
  return Evaluate(x, nullptr, true);
}

Linearization PhotometricModel::Evaluate(const NavState& x, Stats* stats,
                                         bool apply_outliers) const {
  const int size = params_.patch_size;
  const int half = size / 2;
  const int n_pix = size * size;
  const Mat3 R = x.R.matrix();
  const Mat3 Rt = R.transpose();
  const Mat3 R_bc = T_ic_.rotation.matrix();
  const Mat3 R_cb = R_bc.transpose();
  const double inv_s = 1.0 / level_scale_;

  Stats local;
  local.rejected_flags.assign(targets_.size(), 0);
  std::vector<int> accepted;
  std::vector<Eigen::VectorXd> res_blocks;
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 6>> jac_blocks;

  for (std::size_t ti = 0; ti < targets_.size(); ++ti) {
    const PhotometricTarget& tgt = targets_[ti];
    const Vec3 q = Rt * (tgt.world - x.p);
    const Vec3 pc = R_cb * (q - T_ic_.translation);
    if (pc.z() <= 1e-6) {
      ++local.out_of_bounds;
      continue;
    }
    const Vec2 uv0 = Project(k_, pc);
    const Vec2 uv((uv0.x() + 0.5) * inv_s - 0.5, (uv0.y() + 0.5) * inv_s - 0.5);
    if (!sampler_.Contains(uv.x() - half, uv.y() - half) ||
        !sampler_.Contains(uv.x() + half - 1, uv.y() + half - 1)) {
      ++local.out_of_bounds;
      continue;
    }
    Eigen::Matrix<double, 2, 6> J_uv;  // d uv_level / d (dp, dtheta)
    const Eigen::Matrix<double, 2, 3> Jpi = ProjectionJacobian(k_, pc) * inv_s;
    J_uv.leftCols<3>() = Jpi * (-R_cb * Rt);
    J_uv.rightCols<3>() = Jpi * (R_cb * Skew(q));

    Eigen::VectorXd r(n_pix);
    Eigen::Matrix<double, Eigen::Dynamic, 6> H(n_pix, 6);
    double sse = 0.0;
    for (int j = 0; j < size; ++j) {
      for (int i = 0; i < size; ++i) {
        const double px = uv.x() + i - half, py = uv.y() + j - half;
        const int idx = j * size + i;
        const double c = sampler_.Intensity(px, py);
        r[idx] = tgt.reference[idx] - c;
        sse += r[idx] * r[idx];
        H.row(idx) = sampler_.Gradient(px, py).transpose() * J_uv;
      }
    }
    if (sse / n_pix > params_.outlier_threshold) {
      ++local.rejected;
      local.rejected_flags[ti] = 1;
      if (apply_outliers) continue;
    }
    accepted.push_back(static_cast<int>(ti));
    res_blocks.push_back(std::move(r));
    jac_blocks.push_back(std::move(H));
  }
  local.used = static_cast<int>(accepted.size());

  Linearization lin;
  const Eigen::Index m = static_cast<Eigen::Index>(accepted.size()) * n_pix;
  lin.residual.resize(m);
  lin.jacobian = Eigen::MatrixXd::Zero(m, 15);
  lin.variance = Eigen::VectorXd::Constant(m, params_.variance);
  for (std::size_t b = 0; b < accepted.size(); ++b) {
    const Eigen::Index row = static_cast<Eigen::Index>(b) * n_pix;
    lin.residual.segment(row, n_pix) = res_blocks[b];
    lin.jacobian.block(row, idx::kP, n_pix, 3) = jac_blocks[b].leftCols<3>();
    lin.jacobian.block(row, idx::kTheta, n_pix, 3) = jac_blocks[b].rightCols<3>();
  }
  if (stats != nullptr) *stats = std::move(local);
  return lin;
}

std::vector<PhotometricTarget> BuildPhotometricTargets(
    const std::vector<const VisualMapPoint*>& points, const Pose& predicted_T_w_c,
    const CameraIntrinsics& k, int level, int patch_size) {
  std::vector<PhotometricTarget> out;
  const Pose T_c_w = Inverse(predicted_T_w_c);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VisualMapPoint& p = *points[i];
    if (!p.ref_pyramid || level >= p.ref_pyramid->size()) continue;
    const Pose T_ref_w = Inverse(p.ref_pose);
    const Pose T_cur_ref = Compose(T_c_w, p.ref_pose);
    const Vec3 p_ref = Transform(T_ref_w, p.position);
    const Vec3 n_ref = p.ref_pose.rotation.inverse() * p.normal;
    try {
      const Mat2 A_cur_ref = ComputeAffineWarp(k, T_cur_ref, p_ref, n_ref, p.ref_uv);
      if (std::abs(A_cur_ref.determinant()) < 1e-6) continue;
      const Mat2 A_ref_cur = A_cur_ref.inverse();
      const Vec2 center = p.ref_pyramid->ToLevel(p.ref_uv, level);
      Patch w = WarpPatchAffine(p.ref_pyramid->levels[level], A_ref_cur, center, patch_size, level);
      out.push_back({p.position, std::move(w.values), static_cast<int>(i)});
    } catch (const Error&) {
      continue;
    }
  }
  return out;
}

std::string_view UpdateStatusName(UpdateStatus s) {
  switch (s) {
    case UpdateStatus::kOk: return "ok";
    case UpdateStatus::kSkipped: return "skipped";
    case UpdateStatus::kDiverged: return "diverged";
  }
  return "unknown";
}

SparseDirectOutcome CoarseToFineUpdate(const std::vector<const VisualMapPoint*>& points,
                                       const Pyramid& frame, const NavState& prior,
                                       const Mat15& prior_cov, const CameraIntrinsics& k,
                                       const Pose& T_imu_cam, const SparseDirectParams& params) {
  SparseDirectOutcome out;
  out.state = prior;
  out.cov = prior_cov;
  out.rejected_flags.assign(points.size(), 0);
  if (points.empty()) return out;

  const Pose predicted_T_w_c = Compose(prior.pose(), T_imu_cam);
  const int levels = std::min(params.levels, frame.size());
  NavState x = prior;
  Mat15 cov = prior_cov;
  bool finest_updated = false;
  std::vector<PhotometricTarget> finest_targets;

  for (int level = levels - 1; level >= 0; --level) {
    auto targets = BuildPhotometricTargets(points, predicted_T_w_c, k, level,
                                           params.photometric.patch_size);
    if (targets.empty()) continue;
    const BilinearSampler sampler(frame.levels[level]);
    PhotometricModel model(targets, sampler, frame.LevelScale(level), k, T_imu_cam,
                           params.photometric);
    IteratedUpdateOptions opts = params.iterations;
    opts.update_covariance = level == 0;
    const UpdateResult res = IteratedUpdate(prior, prior_cov, x, model, opts);
    if (res.outcome == UpdateOutcome::kOk) {
      x = res.state;
      if (level == 0) {
        cov = res.cov;
        finest_updated = true;
      }
    }
    if (level == 0) finest_targets = std::move(targets);
  }

  if (!finest_targets.empty()) {
    const BilinearSampler sampler(frame.levels[0]);
    PhotometricModel model(finest_targets, sampler, frame.LevelScale(0), k, T_imu_cam,
                           params.photometric);
    PhotometricModel::Stats stats;
    model.Evaluate(x, &stats);
    out.considered = stats.used + stats.rejected;
    out.used = stats.used;
    out.rejected = stats.rejected;
    for (std::size_t t = 0; t < finest_targets.size(); ++t) {
      if (stats.rejected_flags[t]) out.rejected_flags[finest_targets[t].source] = 1;
    }
  }

  if (out.considered == 0) {
    out.status = UpdateStatus::kSkipped;
  } else if (out.rejected > params.divergence_ratio * out.considered) {
    out.status = UpdateStatus::kDiverged;
  } else if (!finest_updated) {
    out.status = UpdateStatus::kSkipped;
  } else {
    out.status = UpdateStatus::kOk;
    out.state = x;
    out.cov = cov;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching

std::vector<Correspondence> HybridMatch(const std::vector<Descriptor>& descriptors,
                                        const SubmapSelection& selection,
                                        const MatchParams& params, int frame_index) {
  std::vector<Descriptor> map_desc;
  std::vector<VisualMapPoint*> map_pts;
  const Descriptor* sample = descriptors.empty() ? nullptr : &descriptors.front();
  for (const SubmapEntry& e : selection.entries) {
    const VisualMapPoint& p = *e.point;
    if (!p.descriptor) continue;
    if (params.reference == MatchReference::kPreviousFrame && p.descriptor_frame != frame_index - 1) {
      continue;
    }
    if (sample != nullptr && (p.descriptor->kind != sample->kind ||
                              p.descriptor->bits.size() != sample->bits.size() ||
                              p.descriptor->values.size() != sample->values.size())) {
      continue;
    }
    map_desc.push_back(*p.descriptor);
    map_pts.push_back(e.point);
  }
  std::vector<Correspondence> out;
  for (const Match& m : MatchMutual(descriptors, map_desc, params.max_distance, params.min_confidence)) {
    out.push_back({m.idx_a, map_pts[m.idx_b], m, false});
  }
  return out;
}

// ---------------------------------------------------------------------------
// P3P and RANSAC

std::vector<double> SolveQuartic(double c4, double c3, double c2, double c1, double c0) {
  double c[5] = {c0, c1, c2, c3, c4};
  int deg = 4;
  const double scale = std::max({std::abs(c0), std::abs(c1), std::abs(c2), std::abs(c3), std::abs(c4)});
  if (scale == 0.0) return {};
  while (deg > 0 && std::abs(c[deg]) <= 1e-14 * scale) --deg;
  if (deg == 0) return {};
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) comp(0, i) = -c[deg - 1 - i] / c[deg];
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  auto eval = [&](double x, double& d) {
    double p = 0.0;
    d = 0.0;
    for (int i = deg; i >= 0; --i) {
      d = d * x + p;
      p = p * x + c[i];
    }
    return p;
  };
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto z = es.eigenvalues()[i];
    if (std::abs(z.imag()) > 1e-4 * (1.0 + std::abs(z.real()))) continue;
    double x = z.real();
    for (int it = 0; it < 8; ++it) {
      double d;
      const double p = eval(x, d);
      if (d == 0.0) break;
      const double step = p / d;
      x -= step;
      if (std::abs(step) <= 1e-15 * (1.0 + std::abs(x))) break;
    }
    roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

namespace {

// Rigid transform (R, t) minimizing sum |Q_i - (R P_i + t)|^2.
Pose Kabsch(const std::array<Vec3, 3>& P, const std::array<Vec3, 3>& Q) {
  Vec3 cp = Vec3::Zero(), cq = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    cp += P[i];
    cq += Q[i];
  }
  cp /= 3.0;
  cq /= 3.0;
  Mat3 H = Mat3::Zero();
  for (int i = 0; i < 3; ++i) H += (P[i] - cp) * (Q[i] - cq).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU(), V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 R = V * D * U.transpose();
  return Pose{Rotation::FromMatrix(R), cq - R * cp};
}

}  // namespace

std::vector<Pose> SolveP3P(const std::array<Vec3, 3>& bearings, const std::array<Vec3, 3>& world) {
  const Vec3 f1 = bearings[0].normalized(), f2 = bearings[1].normalized(),
             f3 = bearings[2].normalized();
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (a2 < 1e-12 || b2 < 1e-12 || c2 < 1e-12) return {};
  const double ca = f2.dot(f3), cb = f1.dot(f3), cg = f1.dot(f2);
  const double amc = (a2 - c2) / b2, apc = (a2 + c2) / b2;

  const double A4 = (amc - 1) * (amc - 1) - 4 * c2 / b2 * ca * ca;
  const double A3 = 4 * (amc * (1 - amc) * cb - (1 - apc) * ca * cg + 2 * c2 / b2 * ca * ca * cb);
  const double A2 = 2 * (amc * amc - 1 + 2 * amc * amc * cb * cb + 2 * (b2 - c2) / b2 * ca * ca -
                         4 * apc * ca * cb * cg + 2 * (b2 - a2) / b2 * cg * cg);
  const double A1 = 4 * (-amc * (1 + amc) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - apc) * ca * cg);
  const double A0 = (1 + amc) * (1 + amc) - 4 * a2 / b2 * cg * cg;

  std::vector<Pose> out;
  for (double v : SolveQuartic(A4, A3, A2, A1, A0)) {
    const double den = 2 * (cg - v * ca);
    if (std::abs(den) < 1e-12) continue;
    const double u = ((-1 + amc) * v * v - 2 * amc * cb * v + 1 + amc) / den;
    const double s1sq = b2 / (1 + v * v - 2 * v * cb);
    if (!(s1sq > 0.0)) continue;
    const double s1 = std::sqrt(s1sq), s2 = u * s1, s3 = v * s1;
    if (s1 <= 0.0 || s2 <= 0.0 || s3 <= 0.0) continue;
    const Pose T_c_w = Kabsch(world, {s1 * f1, s2 * f2, s3 * f3});
    out.push_back(Inverse(T_c_w));
  }
  return out;
}

namespace {

int CountInliers(const std::vector<Observation2D3D>& obs, const Pose& T_w_c,
                 const CameraIntrinsics& k, double threshold, std::vector<char>* flags) {
  const Pose T_c_w = Inverse(T_w_c);
  int n = 0;
  if (flags) flags->assign(obs.size(), 0);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 pc = Transform(T_c_w, obs[i].world);
    if (pc.z() <= 1e-6) continue;
    if ((Project(k, pc) - obs[i].uv).norm() < threshold) {
      ++n;
      if (flags) (*flags)[i] = 1;
    }
  }
  return n;
}

}  // namespace

RansacResult RansacValidate(const std::vector<Observation2D3D>& obs, const Pose& predicted_T_w_c,
                            const CameraIntrinsics& k, const RansacParams& params) {
  const int n = static_cast<int>(obs.size());
  if (n < 4) {
    throw Error(ErrorCode::kTooFewCorrespondences, std::to_string(n) + " correspondences");
  }
  RansacResult best;
  best.T_w_c = predicted_T_w_c;
  best.num_inliers = CountInliers(obs, predicted_T_w_c, k, params.threshold_px, nullptr);
  best.hypothesis = 0;

  if (params.mode == RansacMode::kP3P) {
    SplitMix64 rng(params.seed ^ 0x52414E53ULL);
    int hypothesis = 0;
    for (int it = 0; it < params.max_iters; ++it) {
      int idx[3];
      idx[0] = static_cast<int>(rng.Below(n));
      do idx[1] = static_cast<int>(rng.Below(n)); while (idx[1] == idx[0]);
      do idx[2] = static_cast<int>(rng.Below(n)); while (idx[2] == idx[0] || idx[2] == idx[1]);
      std::array<Vec3, 3> bearings, world;
      for (int j = 0; j < 3; ++j) {
        const Observation2D3D& o = obs[idx[j]];
        bearings[j] = Vec3((o.uv.x() - k.cx) / k.fx, (o.uv.y() - k.cy) / k.fy, 1.0).normalized();
        world[j] = o.world;
      }
      for (const Pose& T : SolveP3P(bearings, world)) {
        ++hypothesis;
        const int c = CountInliers(obs, T, k, params.threshold_px, nullptr);
        if (c > best.num_inliers) {
          best.num_inliers = c;
          best.T_w_c = T;
          best.hypothesis = hypothesis;
        }
      }
    }
  }
  CountInliers(obs, best.T_w_c, k, params.threshold_px, &best.inlier);
  best.sufficient = best.num_inliers >= params.min_inliers;
  return best;
}

// ---------------------------------------------------------------------------
// LiDAR

LidarPlaneModel::LidarPlaneModel(std::vector<Vec3> body_points, const VoxelMap& map,
                                 double variance, double max_residual)
    : body_points_(std::move(body_points)),
      map_(map),
      variance_(variance),
      max_residual_(max_residual) {}

Linearization LidarPlaneModel::Evaluate(const NavState& x) const {
  const Mat3 R = x.R.matrix();
  std::vector<double> res;
  std::vector<Eigen::Matrix<double, 1, 6>> rows;
  for (const Vec3& pb : body_points_) {
    const Vec3 pw = R * pb + x.p;
    const VoxelPlane* plane = map_.PlaneAt(pw);
    if (plane == nullptr) continue;
    const double h = plane->normal.dot(pw - plane->centroid);
    if (std::abs(h) > max_residual_) continue;
    Eigen::Matrix<double, 1, 6> row;
    row.leftCols<3>() = plane->normal.transpose();
    row.rightCols<3>() = -plane->normal.transpose() * R * Skew(pb);
    res.push_back(-h);
    rows.push_back(row);
  }
  Linearization lin;
  const Eigen::Index m = static_cast<Eigen::Index>(res.size());
  lin.residual = Eigen::Map<Eigen::VectorXd>(res.data(), m);
  lin.jacobian = Eigen::MatrixXd::Zero(m, 15);
  for (Eigen::Index i = 0; i < m; ++i) {
    lin.jacobian.block<1, 3>(i, idx::kP) = rows[i].leftCols<3>();
    lin.jacobian.block<1, 3>(i, idx::kTheta) = rows[i].rightCols<3>();
  }
  lin.variance = Eigen::VectorXd::Constant(m, variance_);
  return lin;
}

std::vector<Vec3> SubsampleToBody(const std::vector<Vec3>& sensor_points, const Pose& T_imu_lidar,
                                  int max_points) {
  std::vector<Vec3> out;
  if (sensor_points.empty() || max_points <= 0) return out;
  const std::size_t n = sensor_points.size();
  const std::size_t m = std::min<std::size_t>(n, static_cast<std::size_t>(max_points));
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.push_back(Transform(T_imu_lidar, sensor_points[i * n / m]));
  }
  return out;
}

}  // namespace livobench
