#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "livobench/eskf.h"
#include "livobench/features.h"
#include "livobench/imaging.h"
#include "livobench/mapping.h"

namespace livobench {

/// Intensity and gradient access for the photometric model, in the pixel
/// coordinates of one pyramid level.
class ImageSampler {
 public:
  virtual ~ImageSampler() = default;
  virtual double Intensity(double x, double y) const = 0;
  virtual Vec2 Gradient(double x, double y) const = 0;
  /// True if (x, y) and its gradient stencil are available.
  virtual bool Contains(double x, double y) const = 0;
};

class BilinearSampler : public ImageSampler {
 public:
  explicit BilinearSampler(const GrayImage& img) : img_(img) {}
  double Intensity(double x, double y) const override { return SampleBilinear(img_, x, y); }
  Vec2 Gradient(double x, double y) const override { return GradientAt(img_, x, y); }
  bool Contains(double x, double y) const override {
    return x >= 1.0 && y >= 1.0 && x <= img_.width() - 2 && y <= img_.height() - 2;
  }

 private:
  const GrayImage& img_;
};

struct PhotometricTarget {
  Vec3 world = Vec3::Zero();
  std::vector<double> reference;  // warped reference patch, size * size
  int source = 0;                 // caller's index
};

struct PhotometricParams {
  int patch_size = 8;
  double variance = 100.0;  // intensity^2
  /// A patch is rejected when its mean squared residual per pixel exceeds this.
  double outlier_threshold = 1000.0;
};

/// Residual r = W - C(x) per patch pixel, where W is the warped reference
/// patch and C the current image at the projection of the target.
class PhotometricModel : public MeasurementModel {
 public:
  struct Stats {
    int used = 0;
    int rejected = 0;       // photometric outliers
    int out_of_bounds = 0;  // patch left the image
    std::vector<char> rejected_flags;  // per target
  };

  PhotometricModel(std::vector<PhotometricTarget> targets, const ImageSampler& sampler,
                   double level_scale, const CameraIntrinsics& k, const Pose& T_imu_cam,
                   const PhotometricParams& params);

  Linearization Evaluate(const NavState& x) const override;
  /// Same as Evaluate, also reporting per-target outcomes. `apply_outliers`
  /// false keeps rejected patches in the stack (for Jacobian checks).
  Linearization Evaluate(const NavState& x, Stats* stats, bool apply_outliers = true) const;

  const std::vector<PhotometricTarget>& targets() const { return targets_; }

 private:
  std::vector<PhotometricTarget> targets_;
  const ImageSampler& sampler_;
  double level_scale_;
  CameraIntrinsics k_;
  Pose T_ic_;
  PhotometricParams params_;
};

/// Warped reference patches of `points` for pyramid level `level`, against
/// the predicted camera pose. Points whose warp is degenerate or leaves
/// the reference image are skipped.
std::vector<PhotometricTarget> BuildPhotometricTargets(
    const std::vector<const VisualMapPoint*>& points, const Pose& predicted_T_w_c,
    const CameraIntrinsics& k, int level, int patch_size);

enum class UpdateStatus { kOk, kSkipped, kDiverged };
std::string_view UpdateStatusName(UpdateStatus s);

struct SparseDirectParams {
  int levels = 4;
  PhotometricParams photometric;
  IteratedUpdateOptions iterations;
  /// More than this fraction of patches rejected at the final estimate
  /// marks the frame diverged and reverts the update.
  double divergence_ratio = 0.5;
};

struct SparseDirectOutcome {
  UpdateStatus status = UpdateStatus::kSkipped;
  NavState state;
  Mat15 cov;
  int considered = 0;  // finest-level patches inside the image
  int used = 0;
  int rejected = 0;
  std::vector<char> rejected_flags;  // per input point
};

/// Coarse-to-fine iterated photometric update over `points`. Coarse levels
/// move the mean only; the finest level also updates the covariance. On
/// kSkipped or kDiverged the returned state and covariance equal the prior.
SparseDirectOutcome CoarseToFineUpdate(const std::vector<const VisualMapPoint*>& points,
                                       const Pyramid& frame, const NavState& prior,
                                       const Mat15& prior_cov, const CameraIntrinsics& k,
                                       const Pose& T_imu_cam, const SparseDirectParams& params);

struct Correspondence {
  int keypoint = 0;
  VisualMapPoint* point = nullptr;
  Match match;
  bool inlier = false;
};

enum class MatchReference { kMap, kPreviousFrame };

struct MatchParams {
  double max_distance = 64.0;
  double min_confidence = 0.10;
  MatchReference reference = MatchReference::kMap;
};

/// Frame-to-map matching of current descriptors against descriptors on the
/// selected points. With kPreviousFrame only descriptors observed in
/// frame_index - 1 take part.
std::vector<Correspondence> HybridMatch(const std::vector<Descriptor>& descriptors,
                                        const SubmapSelection& selection,
                                        const MatchParams& params, int frame_index);

struct Observation2D3D {
  Vec2 uv = Vec2::Zero();
  Vec3 world = Vec3::Zero();
};

/// Grunert P3P. Bearings are unit vectors in the camera frame. Returns all
/// real solutions as T_world_cam.
std::vector<Pose> SolveP3P(const std::array<Vec3, 3>& bearings,
                           const std::array<Vec3, 3>& world);

/// Real roots of c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0.
std::vector<double> SolveQuartic(double c4, double c3, double c2, double c1, double c0);

enum class RansacMode { kP3P, kFixedPose };

struct RansacParams {
  double threshold_px = 4.0;
  int max_iters = 100;
  int min_inliers = 8;
  RansacMode mode = RansacMode::kP3P;
  std::uint64_t seed = 0;
};

struct RansacResult {
  std::vector<char> inlier;
  int num_inliers = 0;
  Pose T_w_c;
  int hypothesis = 0;  // 0 = predicted pose
  bool sufficient = false;  // num_inliers >= min_inliers
};

/// Hypothesis 0 is the predicted pose; the rest come from P3P on seeded
/// random triples. Inlier: reprojection error < threshold. Ties keep the
/// earlier hypothesis. Throws kTooFewCorrespondences for fewer than 4.
RansacResult RansacValidate(const std::vector<Observation2D3D>& obs, const Pose& predicted_T_w_c,
                            const CameraIntrinsics& k, const RansacParams& params);

/// Point-to-plane residuals against the voxel map's valid planes.
class LidarPlaneModel : public MeasurementModel {
 public:
  LidarPlaneModel(std::vector<Vec3> body_points, const VoxelMap& map, double variance,
                  double max_residual);
  Linearization Evaluate(const NavState& x) const override;

 private:
  std::vector<Vec3> body_points_;
  const VoxelMap& map_;
  double variance_;
  double max_residual_;
};

/// Evenly strided subset of at most max_points points, mapped to the body frame.
std::vector<Vec3> SubsampleToBody(const std::vector<Vec3>& sensor_points,
                                  const Pose& T_imu_lidar, int max_points);

}  // namespace livobench
