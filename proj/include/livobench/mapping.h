#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "livobench/features.h"
#include "livobench/geometry.h"
#include "livobench/imaging.h"

namespace livobench {

struct VoxelKey {
  std::int64_t x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    return static_cast<std::size_t>((k.x * 73856093) ^ (k.y * 19349663) ^ (k.z * 83492791));
  }
};

struct VoxelPlane {
  Vec3 normal = Vec3::UnitZ();
  Vec3 centroid = Vec3::Zero();
  double planarity = 0.0;
  bool valid = false;
};

struct Voxel {
  std::deque<Vec3> points;
  std::deque<float> intensities;
  VoxelPlane plane;
};

/// Fits a plane to points: normal = eigenvector of the smallest scatter
/// eigenvalue, planarity = 1 - l_min / l_mid clamped to [0, 1]. Valid when
/// planarity >= 0.7 and at least 6 points.
VoxelPlane FitPlane(const std::deque<Vec3>& points);

class VoxelMap {
 public:
  explicit VoxelMap(double voxel_size = 0.5, int capacity = 50);

  /// Appends points (FIFO eviction at capacity) and refits touched voxels.
  void Insert(const std::vector<Vec3>& world_points,
              const std::vector<float>& intensities = {});

  VoxelKey KeyOf(const Vec3& p) const;
  Vec3 CenterOf(const VoxelKey& k) const;
  const Voxel* Find(const Vec3& p) const;
  /// Valid plane of the voxel containing p, or nullptr.
  const VoxelPlane* PlaneAt(const Vec3& p) const;

  /// Drops voxels whose center lies beyond `radius` of `center`, and
  /// points of kept voxels beyond `radius`.
  void Prune(const Vec3& center, double radius);

  std::size_t size() const { return voxels_.size(); }
  double voxel_size() const { return voxel_size_; }
  const std::unordered_map<VoxelKey, Voxel, VoxelKeyHash>& voxels() const { return voxels_; }

 private:
  double voxel_size_;
  int capacity_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash> voxels_;
};

struct VisualMapPoint {
  std::int64_t id = 0;  // creation order
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  std::vector<Patch> ref_patches;  // one per sparse-direct level
  std::shared_ptr<const Pyramid> ref_pyramid;
  Pose ref_pose;  // T_world_cam of the hosting frame
  Vec2 ref_uv = Vec2::Zero();
  double patch_score = 0.0;
  std::optional<Descriptor> descriptor;
  int created_frame = 0;
  int descriptor_frame = -1;  // frame the descriptor was last observed in
};

/// Visual map points in creation order.
class VisualMap {
 public:
  VisualMapPoint& Add(VisualMapPoint p);
  std::size_t size() const { return points_.size(); }
  const std::vector<std::unique_ptr<VisualMapPoint>>& points() const { return points_; }
  void Prune(const Vec3& center, double radius);

 private:
  std::int64_t next_id_ = 0;
  std::vector<std::unique_ptr<VisualMapPoint>> points_;
};

struct SubmapEntry {
  VisualMapPoint* point = nullptr;
  Vec2 uv = Vec2::Zero();
  int cell = 0;
};

struct SubmapSelection {
  int cell_size = 30;
  int cols = 0;
  int rows = 0;
  std::vector<SubmapEntry> entries;  // ordered by cell index

  std::vector<bool> Occupancy() const;
};

struct GridSpec {
  int cell_size = 30;
  int cols = 0;
  int rows = 0;
  static GridSpec For(const CameraIntrinsics& k, int cell_size);
  int CellOf(const Vec2& uv) const;
};

/// cos of the angle between the normal (either sign) and the ray from the
/// point to the camera center.
double ViewCosine(const Vec3& point, const Vec3& normal, const Vec3& camera_center);

struct RetrievalParams {
  int cell_size = 30;
  double max_view_angle_deg = 60.0;
  int border = 0;  // extra margin from the image edge, pixels
};

/// Per grid cell, the visible point with the highest patch score (ties to
/// the earlier-created point).
SubmapSelection RetrieveVisualSubmap(const VisualMap& map, const Pose& T_w_c,
                                     const CameraIntrinsics& k, const RetrievalParams& params);

/// Mean gradient magnitude over the size x size lattice at level 0.
/// Returns nullopt if the lattice does not fit.
std::optional<double> MeanPatchGradient(const GrayImage& img, const Vec2& uv, int size);

/// Axis-aligned crops around uv at each pyramid level, or nullopt if any
/// level does not fit.
std::optional<std::vector<Patch>> CropPatches(const Pyramid& pyr, const Vec2& uv,
                                              int size, int levels);

struct MapPointParams {
  int cell_size = 30;
  int patch_size = 8;
  int levels = 4;
  double grad_threshold = 8.0;
  int border = 48;  // creation margin so every level's patch can be warped
  double max_view_angle_deg = 60.0;
};

/// Candidate LiDAR point with its projection in the current image.
struct ProjectedPoint {
  Vec2 uv;
  Vec3 world;
};

std::vector<ProjectedPoint> ProjectScan(const std::vector<Vec3>& world_points,
                                        const Pose& T_w_c, const CameraIntrinsics& k);

/// Candidate map points: the best-gradient LiDAR point of each free cell.
std::vector<VisualMapPoint> GenerateVisualMapPointsDirect(const std::shared_ptr<const Pyramid>& pyr,
                                  const Pose& T_w_c, const CameraIntrinsics& k,
                                  const std::vector<ProjectedPoint>& scan,
                                  const VoxelMap& voxels, const std::vector<bool>& occupied,
                                  const MapPointParams& params, int frame_index);

/// Nearest projected scan point within the 3x3 pixel window around kp.
std::optional<Vec3> AssociateLidar3x3(const Vec2& kp,
                                      const std::vector<ProjectedPoint>& scan);

/// Pixel-bucketed scan projection for repeated 3x3 lookups.
class ScanIndex {
 public:
  ScanIndex(const std::vector<ProjectedPoint>& scan, int width, int height);
  std::optional<Vec3> Associate(const Vec2& kp) const;

 private:
  const std::vector<ProjectedPoint>* scan_;
  int width_, height_;
  std::unordered_map<std::int64_t, std::vector<int>> buckets_;
};

/// Descriptor-carrying map points from keypoints associated to LiDAR points,
/// best keypoint score per free cell.
std::vector<VisualMapPoint> GenerateVisualMapPointsFromFeatures(const std::shared_ptr<const Pyramid>& pyr,
                                        const Pose& T_w_c, const CameraIntrinsics& k,
                                        const std::vector<Keypoint>& keypoints,
                                        const std::vector<Descriptor>& descriptors,
                                        const ScanIndex& scan, const VoxelMap& voxels,
                                        const std::vector<bool>& occupied,
                                        const MapPointParams& params, int frame_index);

/// Current-view patch score: mean gradient x view cosine.
std::optional<double> PatchScore(const GrayImage& img, const Vec2& uv, int size,
                                 const VisualMapPoint& p, const Vec3& camera_center);

/// Re-hosts `p` on the current frame (patches, pyramid, pose, uv, score).
bool RehostPoint(VisualMapPoint& p, const std::shared_ptr<const Pyramid>& pyr,
                 const Pose& T_w_c, const Vec2& uv, double score, int patch_size, int levels);

/// Applies the 10% hysteresis rule to every entry. Returns the update count.
int UpdateReferencePatches(const SubmapSelection& selection,
                           const std::shared_ptr<const Pyramid>& pyr, const Pose& T_w_c,
                           const CameraIntrinsics& k, int patch_size, int levels);

/// Stride-gated pruning of both maps.
class SlidingWindow {
 public:
  SlidingWindow(double radius = 100.0, double stride = 8.0) : radius_(radius), stride_(stride) {}
  /// Returns true if a prune ran.
  bool Update(const Vec3& position, VoxelMap& voxels, VisualMap& visual);
  double travel() const { return travel_; }

 private:
  double radius_, stride_;
  double travel_ = 0.0;
  std::optional<Vec3> last_;
};

}  // namespace livobench
