#include "livobench/mapping.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "livobench/error.h"

namespace livobench {

VoxelPlane FitPlane(const std::deque<Vec3>& points) {
  VoxelPlane plane;
  if (points.size() < 3) return plane;
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  c /= static_cast<double>(points.size());
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : points) {
    const Vec3 d = p - c;
    scatter += d * d.transpose();
  }
  scatter /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 ev = es.eigenvalues();  // ascending
  plane.centroid = c;
  plane.normal = es.eigenvectors().col(0).normalized();
  plane.planarity = ev[1] > 0.0 ? std::clamp(1.0 - ev[0] / ev[1], 0.0, 1.0) : 0.0;
  plane.valid = points.size() >= 6 && plane.planarity >= 0.7;
  return plane;
}

VoxelMap::VoxelMap(double voxel_size, int capacity)
    : voxel_size_(voxel_size), capacity_(capacity) {
  if (!(voxel_size > 0.0) || capacity < 1) {
    throw Error(ErrorCode::kInvalidArgument, "voxel size and capacity must be positive");
  }
}

VoxelKey VoxelMap::KeyOf(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size_)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size_)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size_))};
}

Vec3 VoxelMap::CenterOf(const VoxelKey& k) const {
  return Vec3((k.x + 0.5) * voxel_size_, (k.y + 0.5) * voxel_size_, (k.z + 0.5) * voxel_size_);
}

void VoxelMap::Insert(const std::vector<Vec3>& world_points,
                      const std::vector<float>& intensities) {
  std::vector<VoxelKey> touched;
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    const Vec3& p = world_points[i];
    if (!p.allFinite()) continue;
    const VoxelKey key = KeyOf(p);
    Voxel& v = voxels_[key];
    if (touched.empty() || !(touched.back() == key)) touched.push_back(key);
    v.points.push_back(p);
    v.intensities.push_back(i < intensities.size() ? intensities[i] : 0.0f);
    while (static_cast<int>(v.points.size()) > capacity_) {
      v.points.pop_front();
      v.intensities.pop_front();
    }
  }
  std::sort(touched.begin(), touched.end(), [](const VoxelKey& a, const VoxelKey& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  });
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  for (const VoxelKey& key : touched) {
    Voxel& v = voxels_.at(key);
    v.plane = FitPlane(v.points);
  }
}

const Voxel* VoxelMap::Find(const Vec3& p) const {
  const auto it = voxels_.find(KeyOf(p));
  return it == voxels_.end() ? nullptr : &it->second;
}

const VoxelPlane* VoxelMap::PlaneAt(const Vec3& p) const {
  const Voxel* v = Find(p);
  return v != nullptr && v->plane.valid ? &v->plane : nullptr;
}

void VoxelMap::Prune(const Vec3& center, double radius) {
  for (auto it = voxels_.begin(); it != voxels_.end();) {
    if ((CenterOf(it->first) - center).norm() > radius) {
      it = voxels_.erase(it);
      continue;
    }
    Voxel& v = it->second;
    bool changed = false;
    for (std::size_t i = 0; i < v.points.size();) {
      if ((v.points[i] - center).norm() > radius) {
        v.points.erase(v.points.begin() + i);
        v.intensities.erase(v.intensities.begin() + i);
        changed = true;
      } else {
        ++i;
      }
    }
    if (v.points.empty()) {
      it = voxels_.erase(it);
      continue;
    }
    if (changed) v.plane = FitPlane(v.points);
    ++it;
  }
}

VisualMapPoint& VisualMap::Add(VisualMapPoint p) {
  p.id = next_id_++;
  points_.push_back(std::make_unique<VisualMapPoint>(std::move(p)));
  return *points_.back();
}

void VisualMap::Prune(const Vec3& center, double radius) {
  std::erase_if(points_, [&](const std::unique_ptr<VisualMapPoint>& p) {
    return (p->position - center).norm() > radius;
  });
}

std::vector<bool> SubmapSelection::Occupancy() const {
  std::vector<bool> occ(static_cast<std::size_t>(cols) * rows, false);
  for (const auto& e : entries) occ[e.cell] = true;
  return occ;
}

GridSpec GridSpec::For(const CameraIntrinsics& k, int cell_size) {
  if (cell_size < 1) throw Error(ErrorCode::kInvalidArgument, "grid cell size must be >= 1");
  return {cell_size, (k.width + cell_size - 1) / cell_size, (k.height + cell_size - 1) / cell_size};
}

int GridSpec::CellOf(const Vec2& uv) const {
  const int c = std::clamp(static_cast<int>(std::floor(uv.x() / cell_size)), 0, cols - 1);
  const int r = std::clamp(static_cast<int>(std::floor(uv.y() / cell_size)), 0, rows - 1);
  return r * cols + c;
}

double ViewCosine(const Vec3& point, const Vec3& normal, const Vec3& camera_center) {
  const Vec3 ray = camera_center - point;
  const double n = ray.norm();
  if (n <= 0.0) return 0.0;
  return std::abs(normal.dot(ray)) / n;
}

namespace {

bool InsideWithBorder(const CameraIntrinsics& k, const Vec2& uv, double border) {
  return uv.x() >= border && uv.y() >= border && uv.x() <= k.width - 1 - border &&
         uv.y() <= k.height - 1 - border;
}

std::optional<Vec2> ProjectWorld(const Pose& T_c_w, const CameraIntrinsics& k, const Vec3& pw) {
  const Vec3 pc = Transform(T_c_w, pw);
  if (pc.z() <= 1e-6) return std::nullopt;
  return Project(k, pc);
}

}  // namespace

SubmapSelection RetrieveVisualSubmap(const VisualMap& map, const Pose& T_w_c,
                                     const CameraIntrinsics& k, const RetrievalParams& params) {
  const GridSpec grid = GridSpec::For(k, params.cell_size);
  SubmapSelection sel;
  sel.cell_size = grid.cell_size;
  sel.cols = grid.cols;
  sel.rows = grid.rows;
  const Pose T_c_w = Inverse(T_w_c);
  const double min_cos = std::cos(params.max_view_angle_deg * std::numbers::pi / 180.0);
  std::vector<int> best(static_cast<std::size_t>(grid.cols) * grid.rows, -1);
  std::vector<Vec2> best_uv(best.size());
  const auto& pts = map.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const VisualMapPoint& p = *pts[i];
    const auto uv = ProjectWorld(T_c_w, k, p.position);
    if (!uv || !InsideWithBorder(k, *uv, params.border)) continue;
    if (ViewCosine(p.position, p.normal, T_w_c.translation) <= min_cos) continue;
    const int cell = grid.CellOf(*uv);
    if (best[cell] < 0 || p.patch_score > pts[best[cell]]->patch_score) {
      best[cell] = static_cast<int>(i);
      best_uv[cell] = *uv;
    }
  }
  for (std::size_t c = 0; c < best.size(); ++c) {
    if (best[c] >= 0) sel.entries.push_back({pts[best[c]].get(), best_uv[c], static_cast<int>(c)});
  }
  return sel;
}

std::optional<double> MeanPatchGradient(const GrayImage& img, const Vec2& uv, int size) {
  const int half = size / 2;
  if (uv.x() - half < 1.0 || uv.y() - half < 1.0 || uv.x() + half - 1 > img.width() - 2 ||
      uv.y() + half - 1 > img.height() - 2) {
    return std::nullopt;
  }
  double acc = 0.0;
  for (int j = 0; j < size; ++j) {
    for (int i = 0; i < size; ++i) {
      acc += GradientAt(img, uv.x() + i - half, uv.y() + j - half).norm();
    }
  }
  return acc / (size * size);
}

std::optional<std::vector<Patch>> CropPatches(const Pyramid& pyr, const Vec2& uv, int size,
                                              int levels) {
  if (levels > pyr.size()) return std::nullopt;
  std::vector<Patch> out;
  out.reserve(levels);
  for (int l = 0; l < levels; ++l) {
    try {
      out.push_back(WarpPatchAffine(pyr.levels[l], Mat2::Identity(), pyr.ToLevel(uv, l), size, l));
    } catch (const Error&) {
      return std::nullopt;
    }
  }
  return out;
}

std::vector<ProjectedPoint> ProjectScan(const std::vector<Vec3>& world_points,
                                        const Pose& T_w_c, const CameraIntrinsics& k) {
  const Pose T_c_w = Inverse(T_w_c);
  std::vector<ProjectedPoint> out;
  for (const Vec3& pw : world_points) {
    const auto uv = ProjectWorld(T_c_w, k, pw);
    if (!uv || !InImage(k, *uv)) continue;
    out.push_back({*uv, pw});
  }
  return out;
}

namespace {

Vec3 OrientTowards(const Vec3& normal, const Vec3& point, const Vec3& camera_center) {
  return normal.dot(camera_center - point) >= 0.0 ? normal : Vec3(-normal);
}

}  // namespace

std::vector<VisualMapPoint> GenerateVisualMapPointsDirect(const std::shared_ptr<const Pyramid>& pyr,
                                  const Pose& T_w_c, const CameraIntrinsics& k,
                                  const std::vector<ProjectedPoint>& scan,
                                  const VoxelMap& voxels, const std::vector<bool>& occupied,
                                  const MapPointParams& params, int frame_index) {
  const GridSpec grid = GridSpec::For(k, params.cell_size);
  const GrayImage& img = pyr->levels.at(0);
  const double min_cos = std::cos(params.max_view_angle_deg * std::numbers::pi / 180.0);
  std::vector<std::vector<int>> by_cell(static_cast<std::size_t>(grid.cols) * grid.rows);
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (!InsideWithBorder(k, scan[i].uv, params.border)) continue;
    const int cell = grid.CellOf(scan[i].uv);
    if (!occupied.empty() && occupied[cell]) continue;
    by_cell[cell].push_back(static_cast<int>(i));
  }
  constexpr std::size_t kMaxCandidates = 16;
  std::vector<VisualMapPoint> out;
  for (const auto& cands : by_cell) {
    if (cands.empty()) continue;
    const std::size_t step = (cands.size() + kMaxCandidates - 1) / kMaxCandidates;
    int best = -1;
    double best_grad = -1.0;
    for (std::size_t j = 0; j < cands.size(); j += step) {
      const ProjectedPoint& c = scan[cands[j]];
      const VoxelPlane* plane = voxels.PlaneAt(c.world);
      if (plane == nullptr) continue;
      if (ViewCosine(c.world, plane->normal, T_w_c.translation) <= min_cos) continue;
      const auto g = MeanPatchGradient(img, c.uv, params.patch_size);
      if (g && *g > best_grad) {
        best_grad = *g;
        best = cands[j];
      }
    }
    if (best < 0 || best_grad < params.grad_threshold) continue;
    const ProjectedPoint& c = scan[best];
    auto patches = CropPatches(*pyr, c.uv, params.patch_size, params.levels);
    if (!patches) continue;
    VisualMapPoint p;
    p.position = c.world;
    p.normal = OrientTowards(voxels.PlaneAt(c.world)->normal, c.world, T_w_c.translation);
    p.ref_patches = std::move(*patches);
    p.ref_pyramid = pyr;
    p.ref_pose = T_w_c;
    p.ref_uv = c.uv;
    p.patch_score = best_grad * ViewCosine(c.world, p.normal, T_w_c.translation);
    p.created_frame = frame_index;
    out.push_back(std::move(p));
  }
  return out;
}

std::optional<Vec3> AssociateLidar3x3(const Vec2& kp, const std::vector<ProjectedPoint>& scan) {
  std::optional<Vec3> best;
  double best_d = 0.0;
  for (const auto& s : scan) {
    const Vec2 d = s.uv - kp;
    if (std::abs(d.x()) > 1.0 || std::abs(d.y()) > 1.0) continue;
    const double n = d.norm();
    if (!best || n < best_d) {
      best = s.world;
      best_d = n;
    }
  }
  return best;
}

ScanIndex::ScanIndex(const std::vector<ProjectedPoint>& scan, int width, int height)
    : scan_(&scan), width_(width), height_(height) {
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const std::int64_t x = std::lround(scan[i].uv.x());
    const std::int64_t y = std::lround(scan[i].uv.y());
    buckets_[y * (width_ + 2) + x].push_back(static_cast<int>(i));
  }
}

std::optional<Vec3> ScanIndex::Associate(const Vec2& kp) const {
  const std::int64_t cx = std::lround(kp.x()), cy = std::lround(kp.y());
  int best = -1;
  double best_d = 0.0;
  for (std::int64_t y = cy - 2; y <= cy + 2; ++y) {
    for (std::int64_t x = cx - 2; x <= cx + 2; ++x) {
      const auto it = buckets_.find(y * (width_ + 2) + x);
      if (it == buckets_.end()) continue;
      for (int i : it->second) {
        const Vec2 d = (*scan_)[i].uv - kp;
        if (std::abs(d.x()) > 1.0 || std::abs(d.y()) > 1.0) continue;
        const double n = d.norm();
        if (best < 0 || n < best_d || (n == best_d && i < best)) {
          best = i;
          best_d = n;
        }
      }
    }
  }
  (void)height_;
  if (best < 0) return std::nullopt;
  return (*scan_)[best].world;
}

std::vector<VisualMapPoint> GenerateVisualMapPointsFromFeatures(const std::shared_ptr<const Pyramid>& pyr,
                                        const Pose& T_w_c, const CameraIntrinsics& k,
                                        const std::vector<Keypoint>& keypoints,
                                        const std::vector<Descriptor>& descriptors,
                                        const ScanIndex& scan, const VoxelMap& voxels,
                                        const std::vector<bool>& occupied,
                                        const MapPointParams& params, int frame_index) {
  const GridSpec grid = GridSpec::For(k, params.cell_size);
  const GrayImage& img = pyr->levels.at(0);
  const double min_cos = std::cos(params.max_view_angle_deg * std::numbers::pi / 180.0);
  std::vector<std::vector<int>> by_cell(static_cast<std::size_t>(grid.cols) * grid.rows);
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Vec2 uv(keypoints[i].x, keypoints[i].y);
    if (!InsideWithBorder(k, uv, params.border)) continue;
    const int cell = grid.CellOf(uv);
    if (!occupied.empty() && occupied[cell]) continue;
    by_cell[cell].push_back(static_cast<int>(i));
  }
  std::vector<VisualMapPoint> out;
  for (auto& cands : by_cell) {
    std::stable_sort(cands.begin(), cands.end(),
                     [&](int a, int b) { return keypoints[a].score > keypoints[b].score; });
    for (int i : cands) {
      const Vec2 uv(keypoints[i].x, keypoints[i].y);
      const auto world = scan.Associate(uv);
      if (!world) continue;  // keypoint discarded
      const VoxelPlane* plane = voxels.PlaneAt(*world);
      if (plane == nullptr) continue;
      const Vec3 normal = OrientTowards(plane->normal, *world, T_w_c.translation);
      const double cosv = ViewCosine(*world, normal, T_w_c.translation);
      if (cosv <= min_cos) continue;
      // The photometric stage tracks the LiDAR point, so patches are
      // centered on its projection.
      const auto pc = Transform(Inverse(T_w_c), *world);
      if (pc.z() <= 1e-6) continue;
      const Vec2 puv = Project(k, pc);
      if (!InsideWithBorder(k, puv, params.border)) continue;
      const auto grad = MeanPatchGradient(img, puv, params.patch_size);
      auto patches = CropPatches(*pyr, puv, params.patch_size, params.levels);
      if (!grad || !patches) continue;
      VisualMapPoint p;
      p.position = *world;
      p.normal = normal;
      p.ref_patches = std::move(*patches);
      p.ref_pyramid = pyr;
      p.ref_pose = T_w_c;
      p.ref_uv = puv;
      p.patch_score = *grad * cosv;
      p.descriptor = descriptors[i];
      p.descriptor_frame = frame_index;
      p.created_frame = frame_index;
      out.push_back(std::move(p));
      break;
    }
  }
  return out;
}

std::optional<double> PatchScore(const GrayImage& img, const Vec2& uv, int size,
                                 const VisualMapPoint& p, const Vec3& camera_center) {
  const auto g = MeanPatchGradient(img, uv, size);
  if (!g) return std::nullopt;
  return *g * ViewCosine(p.position, p.normal, camera_center);
}

bool RehostPoint(VisualMapPoint& p, const std::shared_ptr<const Pyramid>& pyr,
                 const Pose& T_w_c, const Vec2& uv, double score, int patch_size, int levels) {
  auto patches = CropPatches(*pyr, uv, patch_size, levels);
  if (!patches) return false;
  p.ref_patches = std::move(*patches);
  p.ref_pyramid = pyr;
  p.ref_pose = T_w_c;
  p.ref_uv = uv;
  p.patch_score = score;
  return true;
}

int UpdateReferencePatches(const SubmapSelection& selection,
                           const std::shared_ptr<const Pyramid>& pyr, const Pose& T_w_c,
                           const CameraIntrinsics& k, int patch_size, int levels) {
  const Pose T_c_w = Inverse(T_w_c);
  int updated = 0;
  for (const SubmapEntry& e : selection.entries) {
    VisualMapPoint& p = *e.point;
    const auto uv = ProjectWorld(T_c_w, k, p.position);
    if (!uv) continue;
    const auto score = PatchScore(pyr->levels.at(0), *uv, patch_size, p, T_w_c.translation);
    if (!score || *score < 1.1 * p.patch_score) continue;
    if (RehostPoint(p, pyr, T_w_c, *uv, *score, patch_size, levels)) ++updated;
  }
  return updated;
}

bool SlidingWindow::Update(const Vec3& position, VoxelMap& voxels, VisualMap& visual) {
  if (last_) travel_ += (position - *last_).norm();
  last_ = position;
  if (travel_ < stride_) return false;
  voxels.Prune(position, radius_);
  visual.Prune(position, radius_);
  travel_ = 0.0;
  return true;
}

}  // namespace livobench
