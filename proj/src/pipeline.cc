#include "livobench/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <optional>

#include <nlohmann/json.hpp>

#include "livobench/error.h"
#include "livobench/mapping.h"
#include "livobench/plugin.h"
#include "livobench/textio.h"

namespace livobench {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

[[noreturn]] void ConfigFail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kConfigError, path + ": " + what);
}

void CheckKeys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) ConfigFail(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) ConfigFail(path.empty() ? key : path + "." + key, "unknown key");
  }
}

std::string Join(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

void GetDouble(const json& j, const std::string& path, const char* key, double& out, double lo,
               double hi) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) ConfigFail(Join(path, key), "expected a number");
  const double d = v.get<double>();
  if (!(d >= lo && d <= hi)) {
    ConfigFail(Join(path, key), "out of range [" + FormatDouble(lo) + ", " + FormatDouble(hi) + "]");
  }
  out = d;
}

void GetInt(const json& j, const std::string& path, const char* key, int& out, int lo, int hi) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) ConfigFail(Join(path, key), "expected an integer");
  const auto d = v.get<long long>();
  if (d < lo || d > hi) {
    ConfigFail(Join(path, key),
               "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  out = static_cast<int>(d);
}

void GetBool(const json& j, const std::string& path, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) ConfigFail(Join(path, key), "expected true or false");
  out = j.at(key).get<bool>();
}

std::optional<std::string> GetString(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  if (!j.at(key).is_string()) ConfigFail(Join(path, key), "expected a string");
  return j.at(key).get<std::string>();
}

}  // namespace

std::string_view FrontendName(Frontend f) { return f == Frontend::kHybrid ? "hybrid" : "sd"; }

RunConfig ParseRunConfig(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  CheckKeys(root, "", {"frontend", "extractor", "seed", "sparse_direct", "detector", "matcher",
                       "ransac", "mapping", "filter", "plugin"});

  if (auto s = GetString(root, "", "frontend")) {
    if (*s == "sd") c.frontend = Frontend::kSparseDirect;
    else if (*s == "hybrid") c.frontend = Frontend::kHybrid;
    else ConfigFail("frontend", "must be sd or hybrid, got '" + *s + "'");
  }
  if (root.contains("extractor")) {
    const json& e = root.at("extractor");
    std::string kind;
    if (e.is_string()) {
      kind = e.get<std::string>();
    } else {
      CheckKeys(e, "extractor", {"kind", "command"});
      kind = GetString(e, "extractor", "kind").value_or("fast-brief");
      c.extractor_command = GetString(e, "extractor", "command").value_or("");
    }
    if (kind == "fast-brief") {
      c.extractor = ExtractorKind::kFastBrief;
    } else if (kind == "external") {
      c.extractor = ExtractorKind::kExternal;
      if (c.extractor_command.empty()) ConfigFail("extractor.command", "required for external");
    } else {
      ConfigFail("extractor", "must be fast-brief or external, got '" + kind + "'");
    }
  }
  if (root.contains("seed")) {
    if (!root.at("seed").is_number_unsigned() && !root.at("seed").is_number_integer()) {
      ConfigFail("seed", "expected a non-negative integer");
    }
    if (root.at("seed").is_number_integer() && root.at("seed").get<long long>() < 0) {
      ConfigFail("seed", "expected a non-negative integer");
    }
    c.seed = root.at("seed").get<std::uint64_t>();
  }

  if (root.contains("sparse_direct")) {
    const json& s = root.at("sparse_direct");
    const std::string p = "sparse_direct";
    CheckKeys(s, p, {"levels", "patch_size", "outlier_threshold", "photometric_sigma",
                     "grad_threshold"});
    GetInt(s, p, "levels", c.sparse_direct.levels, 1, 6);
    GetInt(s, p, "patch_size", c.sparse_direct.patch_size, 2, 32);
    GetDouble(s, p, "outlier_threshold", c.sparse_direct.outlier_threshold, 1.0, 1e9);
    GetDouble(s, p, "photometric_sigma", c.sparse_direct.photometric_sigma, 1e-3, 1e3);
    GetDouble(s, p, "grad_threshold", c.sparse_direct.grad_threshold, 0.0, 255.0);
  }
  if (root.contains("detector")) {
    const json& s = root.at("detector");
    const std::string p = "detector";
    CheckKeys(s, p, {"threshold", "max_features", "border", "levels", "scale_factor"});
    GetInt(s, p, "threshold", c.detector.threshold, 1, 255);
    GetInt(s, p, "max_features", c.detector.max_features, 1, 100000);
    GetInt(s, p, "border", c.detector.border, 19, 200);
    GetInt(s, p, "levels", c.detector.levels, 1, 12);
    GetDouble(s, p, "scale_factor", c.detector.scale_factor, 1.01, 4.0);
  }
  if (root.contains("matcher")) {
    const json& s = root.at("matcher");
    const std::string p = "matcher";
    CheckKeys(s, p, {"max_distance", "min_confidence", "match_reference"});
    GetDouble(s, p, "max_distance", c.matcher.max_distance, 1e-6, 1e6);
    GetDouble(s, p, "min_confidence", c.matcher.min_confidence, 0.0, 1.0);
    if (auto r = GetString(s, p, "match_reference")) {
      if (*r == "map") c.matcher.reference = MatchReference::kMap;
      else if (*r == "previous_frame") c.matcher.reference = MatchReference::kPreviousFrame;
      else ConfigFail("matcher.match_reference", "must be map or previous_frame");
    }
  }
  if (root.contains("ransac")) {
    const json& s = root.at("ransac");
    const std::string p = "ransac";
    CheckKeys(s, p, {"threshold_px", "max_iters", "min_inliers", "mode"});
    GetDouble(s, p, "threshold_px", c.ransac.threshold_px, 1e-3, 1e3);
    GetInt(s, p, "max_iters", c.ransac.max_iters, 0, 100000);
    GetInt(s, p, "min_inliers", c.ransac.min_inliers, 3, 100000);
    if (auto m = GetString(s, p, "mode")) {
      if (*m == "p3p") c.ransac.mode = RansacMode::kP3P;
      else if (*m == "fixed_pose") c.ransac.mode = RansacMode::kFixedPose;
      else ConfigFail("ransac.mode", "must be p3p or fixed_pose");
    }
  }
  if (root.contains("mapping")) {
    const json& s = root.at("mapping");
    const std::string p = "mapping";
    CheckKeys(s, p, {"grid_size", "voxel_size", "voxel_capacity", "window_radius", "window_stride",
                     "sliding_window", "max_view_angle_deg"});
    GetInt(s, p, "grid_size", c.mapping.grid_size, 4, 640);
    GetDouble(s, p, "voxel_size", c.mapping.voxel_size, 0.01, 10.0);
    GetInt(s, p, "voxel_capacity", c.mapping.voxel_capacity, 6, 100000);
    GetDouble(s, p, "window_radius", c.mapping.window_radius, 1.0, 1e6);
    GetDouble(s, p, "window_stride", c.mapping.window_stride, 0.0, 1e6);
    GetBool(s, p, "sliding_window", c.mapping.sliding_window);
    GetDouble(s, p, "max_view_angle_deg", c.mapping.max_view_angle_deg, 1.0, 90.0);
  }
  if (root.contains("filter")) {
    const json& s = root.at("filter");
    const std::string p = "filter";
    CheckKeys(s, p, {"gyro_noise", "accel_noise", "gyro_bias_walk", "accel_bias_walk", "max_iters",
                     "eps", "lidar_sigma", "lidar_max_points", "lidar_max_residual"});
    GetDouble(s, p, "gyro_noise", c.filter.noise.gyro, 1e-9, 10.0);
    GetDouble(s, p, "accel_noise", c.filter.noise.accel, 1e-9, 100.0);
    GetDouble(s, p, "gyro_bias_walk", c.filter.noise.gyro_bias_walk, 0.0, 10.0);
    GetDouble(s, p, "accel_bias_walk", c.filter.noise.accel_bias_walk, 0.0, 10.0);
    GetInt(s, p, "max_iters", c.filter.max_iters, 1, 100);
    GetDouble(s, p, "eps", c.filter.eps, 0.0, 1.0);
    GetDouble(s, p, "lidar_sigma", c.filter.lidar_sigma, 1e-6, 10.0);
    GetInt(s, p, "lidar_max_points", c.filter.lidar_max_points, 0, 1000000);
    GetDouble(s, p, "lidar_max_residual", c.filter.lidar_max_residual, 1e-3, 100.0);
  }
  c.plugin.timeout_s = ExtractorClient::TimeoutFromEnv(c.plugin.timeout_s);
  if (root.contains("plugin")) {
    const json& s = root.at("plugin");
    const std::string p = "plugin";
    CheckKeys(s, p, {"timeout_s", "min_confidence"});
    GetDouble(s, p, "timeout_s", c.plugin.timeout_s, 1e-3, 3600.0);
    GetDouble(s, p, "min_confidence", c.plugin.min_confidence, 0.0, 1.0);
    // The environment variable wins over the file.
    c.plugin.timeout_s = ExtractorClient::TimeoutFromEnv(c.plugin.timeout_s);
  }
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::kConfigError, "config not found: " + path.string());
  }
  return ParseRunConfig(ReadFile(path));
}

// ---------------------------------------------------------------------------
// Estimator

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

ImuSample InterpolateImu(const std::vector<ImuSample>& imu, double t) {
  auto it = std::lower_bound(imu.begin(), imu.end(), t,
                             [](const ImuSample& s, double v) { return s.t < v; });
  if (it == imu.end()) return imu.back();
  if (it->t == t || it == imu.begin()) return *it;
  const ImuSample& b = *it;
  const ImuSample& a = *(it - 1);
  const double w = (t - a.t) / (b.t - a.t);
  return {t, a.gyro + w * (b.gyro - a.gyro), a.accel + w * (b.accel - a.accel)};
}

std::optional<Vec2> ProjectInto(const Pose& T_c_w, const CameraIntrinsics& k, const Vec3& pw,
                                int margin) {
  const Vec3 pc = Transform(T_c_w, pw);
  if (pc.z() <= 1e-6) return std::nullopt;
  const Vec2 uv = Project(k, pc);
  if (uv.x() < margin || uv.y() < margin || uv.x() > k.width - 1 - margin ||
      uv.y() > k.height - 1 - margin) {
    return std::nullopt;
  }
  return uv;
}

class Estimator {
 public:
  Estimator(const Dataset& ds, const RunConfig& cfg)
      : ds_(ds),
        cfg_(cfg),
        k_(ds.calib.camera),
        voxels_(cfg.mapping.voxel_size, cfg.mapping.voxel_capacity),
        window_(cfg.mapping.window_radius, cfg.mapping.window_stride) {
    if (cfg.frontend == Frontend::kHybrid && cfg.extractor == ExtractorKind::kExternal) {
      client_ = std::make_unique<ExtractorClient>(cfg.extractor_command, cfg.plugin.timeout_s,
                                                  cfg.plugin.min_confidence);
    }
    sd_.levels = cfg.sparse_direct.levels;
    sd_.photometric.patch_size = cfg.sparse_direct.patch_size;
    sd_.photometric.outlier_threshold = cfg.sparse_direct.outlier_threshold;
    sd_.photometric.variance = cfg.sparse_direct.photometric_sigma * cfg.sparse_direct.photometric_sigma;
    sd_.iterations.max_iters = cfg.filter.max_iters;
    sd_.iterations.eps = cfg.filter.eps;
    mp_.cell_size = cfg.mapping.grid_size;
    mp_.patch_size = cfg.sparse_direct.patch_size;
    mp_.levels = cfg.sparse_direct.levels;
    mp_.grad_threshold = cfg.sparse_direct.grad_threshold;
    mp_.max_view_angle_deg = cfg.mapping.max_view_angle_deg;
    rp_.cell_size = cfg.mapping.grid_size;
    rp_.max_view_angle_deg = cfg.mapping.max_view_angle_deg;
  }

  RunResult Run() {
    RunResult result;
    Initialize();
    for (std::size_t f = 0; f < ds_.images.size(); ++f) {
      if (f > 0) PropagateTo(ds_.image_times[f]);
      x_.t = ds_.image_times[f];
      FrameDiagnostics d = ProcessFrame(static_cast<int>(f));
      result.trajectory.push_back({x_.t, x_.pose()});
      result.frames.push_back(std::move(d));
    }
    result.final_cov = P_;
    return result;
  }

 private:
  void Initialize() {
    const auto& gt = ds_.ground_truth;
    x_ = NavState{};
    x_.t = ds_.image_times.front();
    x_.p = gt.front().pose.translation;
    x_.R = gt.front().pose.rotation;
    if (gt.size() > 1 && gt[1].t > gt[0].t) {
      x_.v = (gt[1].pose.translation - gt[0].pose.translation) / (gt[1].t - gt[0].t);
    }
    const double deg = std::numbers::pi / 180.0;
    Vec15 sd;
    sd << Vec3::Constant(0.01), Vec3::Constant(0.05), Vec3::Constant(0.5 * deg),
        Vec3::Constant(0.01), Vec3::Constant(0.1);
    P_ = sd.cwiseAbs2().asDiagonal();
    t_prev_ = x_.t;
  }

  void PropagateTo(double t) {
    const auto& imu = ds_.imu;
    std::vector<double> knots{t_prev_};
    for (const ImuSample& s : imu) {
      if (s.t > t_prev_ && s.t < t) knots.push_back(s.t);
    }
    knots.push_back(t);
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double dt = knots[i + 1] - knots[i];
      if (dt <= 0.0) continue;
      const ImuSample a = InterpolateImu(imu, knots[i]);
      const ImuSample b = InterpolateImu(imu, knots[i + 1]);
      Propagate(x_, P_, 0.5 * (a.gyro + b.gyro), 0.5 * (a.accel + b.accel), dt, cfg_.filter.noise);
    }
    t_prev_ = t;
  }

  IteratedUpdateOptions FilterOptions() const {
    IteratedUpdateOptions o;
    o.max_iters = cfg_.filter.max_iters;
    o.eps = cfg_.filter.eps;
    return o;
  }

  void LidarUpdate(const std::vector<Vec3>& sensor_points, FrameDiagnostics& d) {
    if (voxels_.size() > 0 && cfg_.filter.lidar_max_points > 0) {
      auto body = SubsampleToBody(sensor_points, ds_.calib.T_imu_lidar, cfg_.filter.lidar_max_points);
      d.lidar_points = static_cast<int>(body.size());
      const LidarPlaneModel model(std::move(body), voxels_,
                                  cfg_.filter.lidar_sigma * cfg_.filter.lidar_sigma,
                                  cfg_.filter.lidar_max_residual);
      const UpdateResult r = IteratedUpdate(x_, P_, model, FilterOptions());
      if (r.outcome == UpdateOutcome::kOk) {
        x_ = r.state;
        P_ = r.cov;
        d.lidar_updated = true;
      }
    }
    // Insert a strided subset at the updated pose.
    const Pose T_w_l = Compose(x_.pose(), ds_.calib.T_imu_lidar);
    const std::size_t n = sensor_points.size();
    const std::size_t cap = 4000;
    std::vector<Vec3> world;
    world.reserve(std::min(n, cap));
    for (std::size_t i = 0; i < std::min(n, cap); ++i) {
      const std::size_t src = n <= cap ? i : i * n / cap;
      world.push_back(Transform(T_w_l, sensor_points[src]));
    }
    voxels_.Insert(world);
  }

  FrameDiagnostics ProcessFrame(int f) {
    FrameDiagnostics d;
    d.t = x_.t;
    const LidarScan& scan = ds_.scans[static_cast<std::size_t>(f)];
    std::vector<Vec3> sensor_points;
    sensor_points.reserve(scan.points.size());
    for (const LidarPoint& p : scan.points) sensor_points.emplace_back(p.x, p.y, p.z);

    LidarUpdate(sensor_points, d);

    const GrayImage& img = ds_.images[static_cast<std::size_t>(f)];
    auto pyr = std::make_shared<const Pyramid>(BuildPyramid(img, cfg_.sparse_direct.levels, 2.0));
    double t_retrieve = 0, t_update = 0, t_generate = 0, t_add = 0, t_ref = 0;

    // Retrieval (plus detection, matching and validation for the hybrid).
    auto c0 = Clock::now();
    const Pose T_ic = ds_.calib.T_imu_cam;
    const Pose predicted_T_w_c = Compose(x_.pose(), T_ic);
    SubmapSelection selection = RetrieveVisualSubmap(visual_, predicted_T_w_c, k_, rp_);
    std::vector<const VisualMapPoint*> update_points;
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;
    std::vector<Correspondence> corrs;
    bool gated = false;
    if (cfg_.frontend == Frontend::kHybrid) {
      Extract(img, f, keypoints, descriptors);
      d.feature_num = static_cast<long>(keypoints.size());
      corrs = HybridMatch(descriptors, selection, cfg_.matcher, f);
      d.initial_matches = static_cast<long>(corrs.size());
      if (corrs.size() >= 4) {
        std::vector<Observation2D3D> obs;
        for (const Correspondence& c : corrs) {
          obs.push_back({Vec2(keypoints[c.keypoint].x, keypoints[c.keypoint].y), c.point->position});
        }
        RansacParams rparams = cfg_.ransac;
        rparams.seed = cfg_.seed ^ (static_cast<std::uint64_t>(f) * 0x9E3779B97F4A7C15ULL);
        const RansacResult rr = RansacValidate(obs, predicted_T_w_c, k_, rparams);
        d.inlier_matches = rr.num_inliers;
        for (std::size_t i = 0; i < corrs.size(); ++i) corrs[i].inlier = rr.inlier[i] != 0;
        if (rr.sufficient) {
          gated = true;
          for (const Correspondence& c : corrs) {
            if (c.inlier) update_points.push_back(c.point);
          }
          // Descriptor-less points join when their projection agrees under
          // the predicted and the validated pose.
          const Pose pred_c_w = Inverse(predicted_T_w_c);
          const Pose val_c_w = Inverse(rr.T_w_c);
          for (const SubmapEntry& e : selection.entries) {
            if (e.point->descriptor) continue;
            const auto a = ProjectInto(pred_c_w, k_, e.point->position, 0);
            const auto b = ProjectInto(val_c_w, k_, e.point->position, 0);
            if (a && b && (*a - *b).norm() < cfg_.ransac.threshold_px) {
              update_points.push_back(e.point);
            }
          }
        }
      }
      d.fallback = !gated;
    }
    if (!gated) {
      for (const SubmapEntry& e : selection.entries) update_points.push_back(e.point);
    }
    auto c1 = Clock::now();
    t_retrieve = Seconds(c0, c1);

    // Photometric update.
    std::vector<char> rejected(update_points.size(), 0);
    if (update_points.empty()) {
      d.update_status = UpdateStatus::kSkipped;
    } else {
      const SparseDirectOutcome out =
          CoarseToFineUpdate(update_points, *pyr, x_, P_, k_, T_ic, sd_);
      d.update_status = out.status;
      d.patches_considered = out.considered;
      d.patches_used = out.used;
      d.patches_rejected_photometric = out.rejected;
      rejected = out.rejected_flags;
      if (out.status == UpdateStatus::kOk) {
        x_ = out.state;
        P_ = out.cov;
      }
    }
    auto c2 = Clock::now();
    t_update = Seconds(c1, c2);

    // Map point generation at the updated pose.
    const Pose T_w_c = Compose(x_.pose(), T_ic);
    const SubmapSelection current = RetrieveVisualSubmap(visual_, T_w_c, k_, rp_);
    std::vector<bool> occupied = current.Occupancy();
    std::vector<Vec3> world_scan;
    world_scan.reserve(sensor_points.size());
    const Pose T_w_l = Compose(x_.pose(), ds_.calib.T_imu_lidar);
    for (const Vec3& p : sensor_points) world_scan.push_back(Transform(T_w_l, p));
    const std::vector<ProjectedPoint> projected = ProjectScan(world_scan, T_w_c, k_);
    std::vector<VisualMapPoint> fresh;
    if (cfg_.frontend == Frontend::kHybrid && !keypoints.empty()) {
      const ScanIndex index(projected, k_.width, k_.height);
      fresh = GenerateVisualMapPointsFromFeatures(pyr, T_w_c, k_, keypoints, descriptors, index,
                                                  voxels_, occupied, mp_, f);
    }
    if (cfg_.frontend == Frontend::kSparseDirect) {
      fresh = GenerateVisualMapPointsDirect(pyr, T_w_c, k_, projected, voxels_, occupied, mp_, f);
    }
    auto c3 = Clock::now();
    t_generate = Seconds(c2, c3);

    for (auto& p : fresh) visual_.Add(std::move(p));
    auto c4 = Clock::now();
    t_add = Seconds(c3, c4);

    // Reference patches. Photometrically rejected points keep their
    // reference unless RANSAC validated them; validated ones are re-hosted
    // on this frame with the current descriptor.
    std::vector<const VisualMapPoint*> skip;
    const Pose T_c_w = Inverse(T_w_c);
    for (std::size_t i = 0; i < update_points.size(); ++i) {
      if (rejected[i]) skip.push_back(update_points[i]);
    }
    for (const Correspondence& c : corrs) {
      if (!c.inlier) continue;
      VisualMapPoint& p = *c.point;
      p.descriptor = descriptors[static_cast<std::size_t>(c.keypoint)];
      p.descriptor_frame = f;
      if (std::find(skip.begin(), skip.end(), &p) == skip.end()) continue;
      const auto uv = ProjectInto(T_c_w, k_, p.position, 0);
      if (!uv) continue;
      const auto score = PatchScore(pyr->levels[0], *uv, mp_.patch_size, p, T_w_c.translation);
      if (score) RehostPoint(p, pyr, T_w_c, *uv, *score, mp_.patch_size, mp_.levels);
    }
    SubmapSelection refresh = current;
    std::erase_if(refresh.entries, [&](const SubmapEntry& e) {
      return std::find(skip.begin(), skip.end(), e.point) != skip.end();
    });
    UpdateReferencePatches(refresh, pyr, T_w_c, k_, mp_.patch_size, mp_.levels);
    auto c5 = Clock::now();
    t_ref = Seconds(c4, c5);

    if (cfg_.mapping.sliding_window) window_.Update(x_.p, voxels_, visual_);

    d.sparse_map_size = static_cast<long>(visual_.size());
    d.stages.t = d.t;
    d.stages.times = {{std::string(kStageNames[0]), t_retrieve},
                      {std::string(kStageNames[1]), t_update},
                      {std::string(kStageNames[2]), t_generate},
                      {std::string(kStageNames[3]), t_add},
                      {std::string(kStageNames[4]), t_ref}};
    return d;
  }

  void Extract(const GrayImage& img, int f, std::vector<Keypoint>& keypoints,
               std::vector<Descriptor>& descriptors) {
    if (client_) {
      ExtractorOutput out = client_->Extract(img, static_cast<std::uint64_t>(f));
      keypoints = std::move(out.keypoints);
      descriptors = std::move(out.descriptors);
      return;
    }
    const Pyramid det = BuildPyramid(img, cfg_.detector.levels, cfg_.detector.scale_factor);
    keypoints = DetectOrientedFast(det, cfg_.detector);
    descriptors = DescribeKeypoints(det, keypoints);
  }

  const Dataset& ds_;
  const RunConfig& cfg_;
  CameraIntrinsics k_;
  VoxelMap voxels_;
  VisualMap visual_;
  SlidingWindow window_;
  SparseDirectParams sd_;
  MapPointParams mp_;
  RetrievalParams rp_;
  std::unique_ptr<ExtractorClient> client_;
  NavState x_;
  Mat15 P_ = Mat15::Zero();
  double t_prev_ = 0.0;
};

}  // namespace

RunResult Run(const Dataset& ds, const RunConfig& config) {
  if (ds.images.empty() || ds.ground_truth.empty()) {
    throw Error(ErrorCode::kDatasetError, "dataset has no frames");
  }
  if (ds.scans.size() != ds.images.size() || ds.image_times.size() != ds.images.size()) {
    throw Error(ErrorCode::kDatasetError, "image, timestamp and scan counts differ");
  }
  if (ds.images.size() > 1 && ds.imu.empty()) {
    throw Error(ErrorCode::kDatasetError, "dataset has no IMU samples");
  }
  Estimator est(ds, config);
  return est.Run();
}

RunResult RunDataset(const std::filesystem::path& dataset_dir, const RunConfig& config) {
  Dataset ds;
  try {
    ds = ReadDataset(dataset_dir);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDatasetError) throw;
    throw Error(ErrorCode::kDatasetError, e.what());
  }
  return Run(ds, config);
}

std::vector<StabilityRecord> RunResult::Stability() const {
  std::vector<StabilityRecord> out;
  for (const auto& f : frames) {
    out.push_back({f.t, f.sparse_map_size, f.feature_num, f.initial_matches, f.inlier_matches});
  }
  return out;
}

std::vector<StageRecord> RunResult::Stages() const {
  std::vector<StageRecord> out;
  for (const auto& f : frames) out.push_back(f.stages);
  return out;
}

std::string FramesCsv(const std::vector<FrameDiagnostics>& frames) {
  std::string out =
      "t,update_status,fallback,feature_num,initial_matches,inlier_matches,patches_considered,"
      "patches_used,patches_rejected_photometric,lidar_updated,lidar_points,sparse_map_size\n";
  for (const auto& f : frames) {
    out += FormatDouble(f.t) + "," + std::string(UpdateStatusName(f.update_status)) + "," +
           (f.fallback ? "1" : "0") + "," + std::to_string(f.feature_num) + "," +
           std::to_string(f.initial_matches) + "," + std::to_string(f.inlier_matches) + "," +
           std::to_string(f.patches_considered) + "," + std::to_string(f.patches_used) + "," +
           std::to_string(f.patches_rejected_photometric) + "," + (f.lidar_updated ? "1" : "0") +
           "," + std::to_string(f.lidar_points) + "," + std::to_string(f.sparse_map_size) + "\n";
  }
  return out;
}

void WriteRunOutputs(const RunResult& result, const std::filesystem::path& traj_out,
                     const std::filesystem::path& metrics_dir) {
  if (!metrics_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(metrics_dir, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + metrics_dir.string());
    AtomicWriteFile(metrics_dir / "stability.csv", StabilityCsv(result.Stability()));
    AtomicWriteFile(metrics_dir / "stages.csv", StagesCsv(result.Stages()));
    AtomicWriteFile(metrics_dir / "frames.csv", FramesCsv(result.frames));
  }
  if (!traj_out.empty()) {
    if (traj_out.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(traj_out.parent_path(), ec);
    }
    AtomicWriteFile(traj_out, FormatTum(result.trajectory));
  }
}

// ---------------------------------------------------------------------------
// Bench

std::vector<BenchEntry> ParseBenchMatrix(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, std::string("invalid matrix JSON: ") + e.what());
  }
  CheckKeys(root, "", {"configs"});
  if (!root.contains("configs") || !root.at("configs").is_array() || root.at("configs").empty()) {
    ConfigFail("configs", "expected a non-empty array");
  }
  std::vector<BenchEntry> out;
  int i = 0;
  for (const json& e : root.at("configs")) {
    const std::string path = "configs[" + std::to_string(i++) + "]";
    CheckKeys(e, path, {"name", "config"});
    auto name = GetString(e, path, "name");
    if (!name || name->empty()) ConfigFail(path + ".name", "required");
    for (char ch : *name) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
        ConfigFail(path + ".name", "only [A-Za-z0-9._-] allowed");
      }
    }
    for (const auto& prev : out) {
      if (prev.name == *name) ConfigFail(path + ".name", "duplicate name '" + *name + "'");
    }
    out.push_back({*name, e.contains("config") ? e.at("config").dump() : "{}"});
  }
  return out;
}

namespace {

std::string DatasetName(const std::filesystem::path& p) {
  std::filesystem::path n = p.lexically_normal();
  if (n.filename().empty()) n = n.parent_path();
  const std::string s = n.filename().string();
  return s.empty() ? "dataset" : s;
}

}  // namespace

std::vector<BenchRow> Bench(const std::vector<std::filesystem::path>& datasets,
                            const std::vector<BenchEntry>& matrix,
                            const std::filesystem::path& out_dir) {
  if (matrix.empty()) throw Error(ErrorCode::kConfigError, "bench matrix is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + out_dir.string());
  std::vector<BenchRow> rows;
  for (const auto& dir : datasets) {
    const std::string ds_name = DatasetName(dir);
    std::optional<Dataset> ds;
    std::string ds_error;
    try {
      ds = ReadDataset(dir);
    } catch (const Error& e) {
      ds_error = std::string(ErrorCodeName(e.code())) + ": " + e.what();
    }
    for (const BenchEntry& entry : matrix) {
      BenchRow row;
      row.dataset = ds_name;
      row.config = entry.name;
      try {
        if (!ds) throw Error(ErrorCode::kDatasetError, ds_error);
        const RunConfig cfg = ParseRunConfig(entry.config_json);
        const RunResult result = Run(*ds, cfg);
        const ApeReport ape = Evaluate(result.trajectory, ds->ground_truth, AlignMode::kSe3);
        const std::filesystem::path row_dir = out_dir / (ds_name + "__" + entry.name);
        WriteRunOutputs(result, row_dir / "trajectory.tum", {});
        EmitReport(row_dir / "report", ape, result.Stability(), result.Stages());
        AtomicWriteFile(row_dir / "frames.csv", FramesCsv(result.frames));
        const StageSummary summary = ProfileStages(result.Stages());
        row.ok = true;
        row.rmse = ape.rmse;
        row.max = ape.max;
        for (std::size_t i = 0; i < 5; ++i) row.stage_mean_ms[i] = summary.stages[i].mean * 1e3;
        row.total_mean_ms = summary.total.mean * 1e3;
      } catch (const Error& e) {
        row.ok = false;
        row.error = std::string(ErrorCodeName(e.code())) + ": " + e.what();
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  AtomicWriteFile(out_dir / "table.csv", BenchTableCsv(rows));
  return rows;
}

std::string BenchTableCsv(const std::vector<BenchRow>& rows) {
  std::string out = "dataset,config,status,rmse,max";
  for (auto name : kStageNames) out += "," + std::string(name) + "_ms";
  out += ",total_ms,error\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + r.config + "," + (r.ok ? "ok" : "failed") + ",";
    if (r.ok) {
      out += FormatDouble(r.rmse) + "," + FormatDouble(r.max);
      for (double v : r.stage_mean_ms) out += "," + FormatFixed(v, 3);
      out += "," + FormatFixed(r.total_mean_ms, 3) + ",";
    } else {
      out += ",,,,,,,,";
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out += "\"" + msg + "\"";
    }
    out += "\n";
  }
  return out;
}

}  // namespace livobench
