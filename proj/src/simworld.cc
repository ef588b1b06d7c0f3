#include "livobench/simworld.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "livobench/error.h"
#include "livobench/random.h"
#include "livobench/textio.h"

namespace livobench {

namespace {

constexpr double kPi = std::numbers::pi;

Mat3 RotZ(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
}

Mat3 RotY(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}

// Plane frame from a center, the inward normal and a hint for the texture
// "up" direction.
TexturedPlane MakePlane(const Vec3& center, const Vec3& normal,
                        const Vec3& up_hint, const Vec2& half_extent,
                        std::uint64_t seed, double texture_scale = 1.0) {
  const Vec3 z = normal.normalized();
  const Vec3 x = up_hint.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  TexturedPlane p;
  p.pose = Pose{Rotation::FromMatrix(r), center};
  p.half_extent = half_extent;
  p.texture_seed = seed;
  p.texture_scale = texture_scale;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Texture

Texture::Texture(std::uint64_t seed, double scale) {
  SplitMix64 rng(seed ^ 0x7E57u);
  // Wavelengths log-uniform over [0.12, 0.8] m so corners appear at several scales.
  for (int i = 0; i < 8; ++i) {
    const double lambda = scale * 0.12 * std::pow(0.8 / 0.12, rng.Uniform());
    const double dir = rng.Uniform(0.0, 2.0 * kPi);
    const double k = 2.0 * kPi / lambda;
    waves_.push_back({k * std::cos(dir), k * std::sin(dir), 14.0,
                      rng.Uniform(0.0, 2.0 * kPi), false});
  }
  for (int i = 0; i < 2; ++i) {
    const double kx = 2.0 * kPi / (scale * rng.Uniform(0.25, 0.6));
    const double ky = 2.0 * kPi / (scale * rng.Uniform(0.25, 0.6));
    waves_.push_back({kx, ky, 18.0, rng.Uniform(0.0, 2.0 * kPi), true});
  }
}

double Texture::operator()(double u, double v) const {
  double acc = 128.0;
  for (const Wave& w : waves_) {
    if (w.product) {
      acc += w.amplitude * std::sin(w.kx * u + w.phase) *
             std::sin(w.ky * v + 0.5 * w.phase);
    } else {
      acc += w.amplitude * std::sin(w.kx * u + w.ky * v + w.phase);
    }
  }
  return std::clamp(acc, 0.0, 255.0);
}

Vec2 Texture::Gradient(double u, double v) const {
  Vec2 g = Vec2::Zero();
  for (const Wave& w : waves_) {
    if (w.product) {
      const double a = w.kx * u + w.phase;
      const double b = w.ky * v + 0.5 * w.phase;
      g.x() += w.amplitude * w.kx * std::cos(a) * std::sin(b);
      g.y() += w.amplitude * w.ky * std::sin(a) * std::cos(b);
    } else {
      const double c = w.amplitude * std::cos(w.kx * u + w.ky * v + w.phase);
      g.x() += c * w.kx;
      g.y() += c * w.ky;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Scene

void Scene::AddPlane(const TexturedPlane& plane) {
  planes_.push_back(plane);
  textures_.emplace_back(plane.texture_seed, plane.texture_scale);
  rotations_.push_back(plane.pose.rotation.matrix());
}

std::optional<Scene::Hit> Scene::Raycast(const Vec3& origin, const Vec3& dir,
                                         double max_range,
                                         double min_range) const {
  std::optional<Hit> best;
  double best_s = max_range;
  for (std::size_t i = 0; i < planes_.size(); ++i) {
    const Mat3& r = rotations_[i];
    const Vec3 n = r.col(2);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const Vec3& c = planes_[i].pose.translation;
    const double s = n.dot(c - origin) / denom;
    if (!(s > min_range) || s > best_s) continue;
    const Vec3 hit = origin + s * dir;
    const Vec3 rel = hit - c;
    const double u = r.col(0).dot(rel);
    const double v = r.col(1).dot(rel);
    if (std::abs(u) > planes_[i].half_extent.x() ||
        std::abs(v) > planes_[i].half_extent.y()) {
      continue;
    }
    best_s = s;
    best = Hit{s, hit, n, textures_[i](u, v), static_cast<int>(i)};
  }
  return best;
}

double Scene::TextureAt(int plane, const Vec3& world_point) const {
  const Mat3& r = rotations_[plane];
  const Vec3 rel = world_point - planes_[plane].pose.translation;
  return textures_[plane](r.col(0).dot(rel), r.col(1).dot(rel));
}

// ---------------------------------------------------------------------------
// Rig

SensorRig SensorRig::Default() {
  SensorRig rig;
  // Camera looks along body +x: cam x = -body y, cam y = -body z.
  Mat3 r_bc;
  r_bc << 0, 0, 1,
          -1, 0, 0,
          0, -1, 0;
  rig.T_imu_cam = Pose{Rotation::FromMatrix(r_bc), Vec3(0.05, 0.0, 0.02)};
  rig.T_imu_lidar = Pose{Rotation(), Vec3(0.0, 0.0, 0.08)};
  rig.imu.gyro_noise_density = 2e-3;
  rig.imu.accel_noise_density = 2e-2;
  rig.imu.gyro_bias = Vec3(2e-3, -1.5e-3, 1e-3);
  rig.imu.accel_bias = Vec3(0.03, -0.02, 0.04);
  return rig;
}

void SensorRig::Validate() const {
  camera.Validate();
  if (imu_rate_hz <= 0 || camera_rate_hz <= 0 || lidar_rate_hz <= 0 ||
      imu_rate_hz % camera_rate_hz != 0 || imu_rate_hz % lidar_rate_hz != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "IMU rate must be a whole multiple of camera and LiDAR rates");
  }
}

// ---------------------------------------------------------------------------
// Trajectories

TrajectoryKind ParseTrajectoryKind(const std::string& name) {
  if (name == "circle") return TrajectoryKind::kCircle;
  if (name == "lissajous") return TrajectoryKind::kLissajous;
  if (name == "corridor") return TrajectoryKind::kCorridor;
  throw Error(ErrorCode::kUnknownKind, "trajectory kind '" + name + "'");
}

namespace {

// Lissajous shape: (4 sin wt, 2.5 sin 2wt, 0.3 sin wt); mean speed at w = 1.
double LissajousUnitSpeed() {
  constexpr int n = 4000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * kPi * (i + 0.5) / n;
    const Vec3 v(4.0 * std::cos(th), 5.0 * std::cos(2 * th), 0.3 * std::cos(th));
    acc += v.norm();
  }
  return acc / n;
}

}  // namespace

TrajectoryModel::TrajectoryModel(TrajectoryKind kind, double duration,
                                 double speed, YawMode yaw_mode,
                                 const Vec3& center)
    : kind_(kind),
      duration_(duration),
      speed_(speed),
      yaw_mode_(yaw_mode),
      center_(center) {
  switch (kind_) {
    case TrajectoryKind::kCircle: omega_ = speed_ / radius_; break;
    case TrajectoryKind::kLissajous: omega_ = speed_ / LissajousUnitSpeed(); break;
    case TrajectoryKind::kCorridor: omega_ = 0.0; break;
  }
}

KinematicSample TrajectoryModel::At(double t) const {
  KinematicSample s;
  s.t = t;
  Vec3 p, v, a;
  const double w = omega_;
  switch (kind_) {
    case TrajectoryKind::kCircle: {
      const double c = std::cos(w * t), sn = std::sin(w * t);
      p = center_ + radius_ * Vec3(c, sn, 0.0);
      v = radius_ * w * Vec3(-sn, c, 0.0);
      a = -radius_ * w * w * Vec3(c, sn, 0.0);
      break;
    }
    case TrajectoryKind::kLissajous: {
      p = center_ + Vec3(4.0 * std::sin(w * t), 2.5 * std::sin(2 * w * t),
                         0.3 * std::sin(w * t));
      v = Vec3(4.0 * w * std::cos(w * t), 5.0 * w * std::cos(2 * w * t),
               0.3 * w * std::cos(w * t));
      a = Vec3(-4.0 * w * w * std::sin(w * t),
               -10.0 * w * w * std::sin(2 * w * t),
               -0.3 * w * w * std::sin(w * t));
      break;
    }
    case TrajectoryKind::kCorridor: {
      p = center_ + Vec3(speed_ * t, 0.4 * std::sin(0.5 * t),
                         0.1 * std::sin(0.7 * t));
      v = Vec3(speed_, 0.2 * std::cos(0.5 * t), 0.07 * std::cos(0.7 * t));
      a = Vec3(0.0, -0.1 * std::sin(0.5 * t), -0.049 * std::sin(0.7 * t));
      break;
    }
  }
  s.velocity = v;
  s.acceleration = a;
  if (yaw_mode_ == YawMode::kTangent) {
    // A stationary model keeps yaw 0.
    const double h2 = v.x() * v.x() + v.y() * v.y();
    const double yaw = h2 > 0.0 ? std::atan2(v.y(), v.x()) : 0.0;
    const double yaw_rate = h2 > 0.0 ? (v.x() * a.y() - v.y() * a.x()) / h2 : 0.0;
    s.pose = Pose{Rotation::FromMatrix(RotZ(yaw)), p};
    s.angular_velocity = Vec3(0.0, 0.0, yaw_rate);
  } else {
    // Body +x (the optical axis) points straight down.
    s.pose = Pose{Rotation::FromMatrix(RotY(kPi / 2)), p};
    s.angular_velocity = Vec3::Zero();
  }
  return s;
}

std::vector<KinematicSample> TrajectoryModel::Sample(double rate_hz) const {
  std::vector<KinematicSample> out;
  for (long k = 0;; ++k) {
    const double t = k / rate_hz;
    if (t > duration_ + 1e-12) break;
    out.push_back(At(t));
  }
  return out;
}

TrajectoryModel GenerateTrajectory(const std::string& kind, double duration,
                                   double speed, YawMode yaw_mode,
                                   const Vec3& center) {
  const TrajectoryKind k = ParseTrajectoryKind(kind);
  if (!(duration >= 5.0)) {
    throw Error(ErrorCode::kInvalidArgument, "duration must be >= 5 s");
  }
  if (!(speed > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "speed must be positive");
  }
  return TrajectoryModel(k, duration, speed, yaw_mode, center);
}

// ---------------------------------------------------------------------------
// Sensor synthesis

std::vector<ImuSample> SynthImu(const TrajectoryModel& traj, const SensorRig& rig,
                                std::uint64_t seed, double end_time) {
  SplitMix64 rng(seed ^ 0x1A2B3C4DULL);
  const double rate = rig.imu_rate_hz;
  const double gyro_sigma = rig.imu.gyro_noise_density * std::sqrt(rate);
  const double accel_sigma = rig.imu.accel_noise_density * std::sqrt(rate);
  std::vector<ImuSample> out;
  for (long k = 0;; ++k) {
    const double t = k / rate;
    if (t > end_time + 1e-12) break;
    const KinematicSample s = traj.At(t);
    ImuSample m;
    m.t = t;
    m.gyro = s.angular_velocity + rig.imu.gyro_bias;
    m.accel = s.pose.rotation.inverse() * (s.acceleration - kGravity) +
              rig.imu.accel_bias;
    if (gyro_sigma > 0.0 || accel_sigma > 0.0) {
      for (int i = 0; i < 3; ++i) m.gyro[i] += gyro_sigma * rng.Gaussian();
      for (int i = 0; i < 3; ++i) m.accel[i] += accel_sigma * rng.Gaussian();
    }
    out.push_back(m);
  }
  return out;
}

std::vector<LidarPoint> SynthLidar(const Scene& scene, const Pose& body_pose,
                                   const SensorRig& rig) {
  const Pose sensor = Compose(body_pose, rig.T_imu_lidar);
  const Mat3 r = sensor.rotation.matrix();
  std::vector<LidarPoint> out;
  for (int row = 0; row < rig.lidar_rows; ++row) {
    const double elev =
        rig.lidar_rows == 1
            ? 0.0
            : (rig.lidar_min_elevation_deg +
               (rig.lidar_max_elevation_deg - rig.lidar_min_elevation_deg) * row /
                   (rig.lidar_rows - 1)) *
                  kPi / 180.0;
    for (int col = 0; col < rig.lidar_cols; ++col) {
      const double az = 2.0 * kPi * col / rig.lidar_cols;
      const Vec3 dir_s(std::cos(elev) * std::cos(az),
                       std::cos(elev) * std::sin(az), std::sin(elev));
      const auto hit = scene.Raycast(sensor.translation, r * dir_s,
                                     rig.lidar_max_range, rig.lidar_min_range);
      if (!hit) continue;
      const Vec3 p = hit->range * dir_s;
      out.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                     static_cast<float>(p.z()),
                     static_cast<float>(hit->intensity)});
    }
  }
  return out;
}

GrayImage RenderImage(const Scene& scene, const Pose& body_pose,
                      const SensorRig& rig, const IlluminationProfile& illum,
                      double t) {
  const CameraIntrinsics& k = rig.camera;
  const Pose cam = Compose(body_pose, rig.T_imu_cam);
  const Mat3 r = cam.rotation.matrix();
  const double gain = illum.Gain(t);
  const double offset = illum.Offset(t);
  const double r_max2 = k.cx * k.cx + k.cy * k.cy;
  GrayImage img(k.width, k.height, 0);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 ray_c((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const auto hit = scene.Raycast(cam.translation, (r * ray_c).normalized(),
                                     std::numeric_limits<double>::infinity());
      if (!hit) continue;
      double value = std::clamp(gain * hit->intensity + offset, 0.0, 255.0);
      if (illum.vignette_strength > 0.0) {
        const double du = u - k.cx, dv = v - k.cy;
        value *= 1.0 - illum.vignette_strength * (du * du + dv * dv) / r_max2;
      }
      img.at(u, v) = static_cast<std::uint8_t>(std::lround(value));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Scenarios

const std::vector<std::string>& ScenarioNames() {
  static const std::vector<std::string> names = {
      "baseline", "lowlight", "overexposure", "illum-step", "ground-facing",
      "planar"};
  return names;
}

namespace {

std::uint64_t PlaneSeed(std::uint64_t seed, int index) {
  SplitMix64 rng(seed * 0x100000001B3ULL + static_cast<std::uint64_t>(index));
  return rng.Next();
}

Scene MakeRoom(std::uint64_t seed) {
  const double half = 8.0, height = 4.0;
  Scene s;
  int i = 0;
  s.AddPlane(MakePlane({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {half, half}, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({0, 0, height}, {0, 0, -1}, {0, 1, 0}, {half, half}, PlaneSeed(seed, i++)));
  const Vec2 wall(half, height / 2);
  s.AddPlane(MakePlane({half, 0, height / 2}, {-1, 0, 0}, {0, 0, 1}, wall, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({-half, 0, height / 2}, {1, 0, 0}, {0, 0, 1}, wall, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({0, half, height / 2}, {0, -1, 0}, {0, 0, 1}, wall, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({0, -half, height / 2}, {0, 1, 0}, {0, 0, 1}, wall, PlaneSeed(seed, i++)));
  return s;
}

// Long tunnel: side walls, floor and ceiling constrain everything but the
// x axis for a LiDAR with 15 m range; the end walls are out of range.
Scene MakeTunnel(std::uint64_t seed) {
  const double half_len = 25.0, half_w = 7.0, height = 3.5;
  Scene s;
  int i = 0;
  s.AddPlane(MakePlane({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {half_len, half_w}, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({0, 0, height}, {0, 0, -1}, {0, 1, 0}, {half_len, half_w}, PlaneSeed(seed, i++)));
  const Vec2 side(half_len, height / 2);
  s.AddPlane(MakePlane({0, half_w, height / 2}, {0, -1, 0}, {0, 0, 1}, side, PlaneSeed(seed, i++)));
  s.AddPlane(MakePlane({0, -half_w, height / 2}, {0, 1, 0}, {0, 0, 1}, side, PlaneSeed(seed, i++)));
  const Vec2 end(half_w, height / 2);
  s.AddPlane(MakePlane({half_len, 0, height / 2}, {-1, 0, 0}, {0, 0, 1}, end, PlaneSeed(seed, i++), 4.0));
  s.AddPlane(MakePlane({-half_len, 0, height / 2}, {1, 0, 0}, {0, 0, 1}, end, PlaneSeed(seed, i++), 4.0));
  return s;
}

}  // namespace

Scenario MakeScenario(const std::string& name, const ScenarioOptions& options) {
  SensorRig rig = SensorRig::Default();
  if (options.noise_free) rig.imu = ImuNoise{};
  const double duration = options.duration;
  const auto circle = [&](YawMode mode, const Vec3& center) {
    return GenerateTrajectory("circle", duration, 1.0, mode, center);
  };
  IlluminationProfile illum;
  if (name == "baseline") {
    return {name, MakeRoom(options.seed), rig, illum,
            circle(YawMode::kTangent, {0, 0, 1.5})};
  }
  if (name == "lowlight") {
    illum.gain = 0.1;
    return {name, MakeRoom(options.seed), rig, illum,
            circle(YawMode::kTangent, {0, 0, 1.5})};
  }
  if (name == "overexposure") {
    illum.gain = 3.0;
    return {name, MakeRoom(options.seed), rig, illum,
            circle(YawMode::kTangent, {0, 0, 1.5})};
  }
  if (name == "illum-step") {
    illum.step_time = duration / 2.0;
    illum.step_gain = options.illum_step_gain;
    return {name, MakeTunnel(options.seed), rig, illum,
            circle(YawMode::kTangent, {0, 0, 1.5})};
  }
  if (name == "ground-facing") {
    Scene s;
    s.AddPlane(MakePlane({0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {40, 40},
                         PlaneSeed(options.seed, 0)));
    return {name, std::move(s), rig, illum,
            circle(YawMode::kFixedDown, {0, 0, 4.0})};
  }
  if (name == "planar") {
    Scene s;
    s.AddPlane(MakePlane({0, 4, 3}, {0, -1, 0}, {0, 0, 1}, {60, 3},
                         PlaneSeed(options.seed, 0)));
    return {name, std::move(s), rig, illum,
            GenerateTrajectory("corridor", duration, 1.0, YawMode::kTangent,
                               {-15, 0, 1.5})};
  }
  std::string catalog;
  for (const auto& n : ScenarioNames()) catalog += (catalog.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::kUnknownKind,
              "scenario '" + name + "' (catalog: " + catalog + ")");
}

Dataset GenerateDataset(const Scenario& sc, std::uint64_t seed, int threads) {
  sc.rig.Validate();
  Dataset ds;
  ds.calib.camera = sc.rig.camera;
  ds.calib.T_imu_cam = sc.rig.T_imu_cam;
  ds.calib.T_imu_lidar = sc.rig.T_imu_lidar;
  ds.calib.imu = sc.rig.imu;
  ds.calib.imu_rate_hz = sc.rig.imu_rate_hz;

  const double duration = sc.trajectory.duration();
  const long n_frames = std::lround(duration * sc.rig.camera_rate_hz);
  const long n_scans = std::lround(duration * sc.rig.lidar_rate_hz);
  for (long k = 0; k < n_frames; ++k) {
    const double t = static_cast<double>(k) / sc.rig.camera_rate_hz;
    ds.image_times.push_back(t);
    ds.ground_truth.push_back({t, sc.trajectory.At(t).pose});
  }
  double end_time = ds.image_times.empty() ? 0.0 : ds.image_times.back();
  ds.scans.resize(n_scans);
  for (long k = 0; k < n_scans; ++k) {
    ds.scans[k].t = static_cast<double>(k) / sc.rig.lidar_rate_hz;
    end_time = std::max(end_time, ds.scans[k].t);
  }
  ds.imu = SynthImu(sc.trajectory, sc.rig, seed, end_time);

  ds.images.resize(n_frames);
  auto work = [&](long begin, long stride) {
    for (long k = begin; k < n_frames; k += stride) {
      const double t = ds.image_times[k];
      ds.images[k] = RenderImage(sc.scene, ds.ground_truth[k].pose, sc.rig,
                                 sc.illumination, t);
    }
    for (long k = begin; k < n_scans; k += stride) {
      ds.scans[k].points =
          SynthLidar(sc.scene, sc.trajectory.At(ds.scans[k].t).pose, sc.rig);
    }
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(work, i, threads);
    for (auto& th : pool) th.join();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset IO

namespace {

using nlohmann::json;

json PoseToJson(const Pose& p) {
  const auto& q = p.rotation;
  return json{{"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
              {"quaternion", {q.w(), q.x(), q.y(), q.z()}}};
}

Vec3 Vec3FromJson(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Pose PoseFromJson(const json& j) {
  const json& q = j.at("quaternion");
  if (!q.is_array() || q.size() != 4) throw std::runtime_error("expected quaternion");
  return Pose{Rotation(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                       q[3].get<double>()),
              Vec3FromJson(j.at("translation"))};
}

std::string FrameName(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

// Line-oriented reader that tracks byte offsets for diagnostics.
struct LineCursor {
  std::string text;
  std::string file;
  std::size_t pos = 0;
  std::size_t line_start = 0;

  bool Next(std::string_view& line) {
    if (pos >= text.size()) return false;
    line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = std::string_view(text).substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  }

  [[noreturn]] void Fail(const std::string& what) const {
    throw Error(ErrorCode::kFormatError,
                file + " at byte " + std::to_string(line_start) + ": " + what);
  }
};

LineCursor OpenStream(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / name;
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kMissingStream, path.string());
  }
  return LineCursor{ReadFile(path), path.string()};
}

std::vector<double> ParseRow(LineCursor& cur, std::string_view line, char sep,
                             std::size_t expected) {
  const auto fields = SplitFields(line, sep);
  if (fields.size() != expected) {
    cur.Fail("expected " + std::to_string(expected) + " fields, got " +
             std::to_string(fields.size()));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (auto f : fields) {
    const auto v = ParseDouble(f);
    if (!v) cur.Fail("not a number: '" + std::string(f) + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::pair<double, std::string>> ReadIndex(LineCursor cur) {
  std::vector<std::pair<double, std::string>> rows;
  std::string_view line;
  if (!cur.Next(line) || line != "t,filename") cur.Fail("expected header 't,filename'");
  while (cur.Next(line)) {
    if (line.empty()) continue;
    const auto fields = SplitFields(line, ',');
    if (fields.size() != 2) cur.Fail("expected 't,filename'");
    const auto t = ParseDouble(fields[0]);
    if (!t) cur.Fail("bad timestamp");
    if (!rows.empty() && !(*t > rows.back().first)) cur.Fail("timestamps not increasing");
    rows.emplace_back(*t, std::string(fields[1]));
  }
  return rows;
}

std::string EncodeScan(const std::vector<LidarPoint>& pts) {
  static_assert(sizeof(LidarPoint) == 16);
  std::string out(4 + 16 * pts.size(), '\0');
  const std::uint32_t n = static_cast<std::uint32_t>(pts.size());
  // Little-endian host assumed (x86-64 / aarch64).
  std::memcpy(out.data(), &n, 4);
  if (!pts.empty()) std::memcpy(out.data() + 4, pts.data(), 16 * pts.size());
  return out;
}

std::vector<LidarPoint> DecodeScan(const std::string& bytes, const std::string& file) {
  if (bytes.size() < 4) {
    throw Error(ErrorCode::kFormatError,
                file + " at byte " + std::to_string(bytes.size()) + ": missing count");
  }
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data(), 4);
  const std::size_t need = 4 + 16 * static_cast<std::size_t>(n);
  if (bytes.size() != need) {
    throw Error(ErrorCode::kFormatError,
                file + " at byte " + std::to_string(std::min(bytes.size(), need)) +
                    ": expected " + std::to_string(need) + " bytes for " +
                    std::to_string(n) + " points, found " +
                    std::to_string(bytes.size()));
  }
  std::vector<LidarPoint> pts(n);
  if (n > 0) std::memcpy(pts.data(), bytes.data() + 4, 16 * n);
  return pts;
}

}  // namespace

void WriteDataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "lidar", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string());

  const auto& k = ds.calib.camera;
  json calib{
      {"camera", {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
                  {"width", k.width}, {"height", k.height}}},
      {"T_imu_cam", PoseToJson(ds.calib.T_imu_cam)},
      {"T_imu_lidar", PoseToJson(ds.calib.T_imu_lidar)},
      {"gravity", {ds.calib.gravity.x(), ds.calib.gravity.y(), ds.calib.gravity.z()}},
      {"imu",
       {{"rate_hz", ds.calib.imu_rate_hz},
        {"gyro_noise_density", ds.calib.imu.gyro_noise_density},
        {"accel_noise_density", ds.calib.imu.accel_noise_density},
        {"gyro_bias", {ds.calib.imu.gyro_bias.x(), ds.calib.imu.gyro_bias.y(),
                       ds.calib.imu.gyro_bias.z()}},
        {"accel_bias", {ds.calib.imu.accel_bias.x(), ds.calib.imu.accel_bias.y(),
                        ds.calib.imu.accel_bias.z()}}}}};
  AtomicWriteFile(dir / "calib.json", calib.dump(2) + "\n");

  std::string gt;
  for (const auto& s : ds.ground_truth) {
    const auto& q = s.pose.rotation;
    const auto& p = s.pose.translation;
    gt += FormatDouble(s.t) + " " + FormatDouble(p.x()) + " " + FormatDouble(p.y()) +
          " " + FormatDouble(p.z()) + " " + FormatDouble(q.x()) + " " +
          FormatDouble(q.y()) + " " + FormatDouble(q.z()) + " " +
          FormatDouble(q.w()) + "\n";
  }
  AtomicWriteFile(dir / "gt.tum", gt);

  std::string imu = "t,gx,gy,gz,ax,ay,az\n";
  for (const auto& m : ds.imu) {
    imu += FormatDouble(m.t);
    for (int i = 0; i < 3; ++i) imu += "," + FormatDouble(m.gyro[i]);
    for (int i = 0; i < 3; ++i) imu += "," + FormatDouble(m.accel[i]);
    imu += "\n";
  }
  AtomicWriteFile(dir / "imu.csv", imu);

  std::string images = "t,filename\n";
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const std::string name = "images/" + FrameName(i) + ".pgm";
    const auto bytes = EncodePgm(ds.images[i]);
    AtomicWriteFile(dir / name, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                                 bytes.size()));
    images += FormatDouble(ds.image_times[i]) + "," + name + "\n";
  }
  AtomicWriteFile(dir / "images.csv", images);

  std::string lidar = "t,filename\n";
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    const std::string name = "lidar/" + FrameName(i) + ".bin";
    AtomicWriteFile(dir / name, EncodeScan(ds.scans[i].points));
    lidar += FormatDouble(ds.scans[i].t) + "," + name + "\n";
  }
  AtomicWriteFile(dir / "lidar.csv", lidar);
}

Dataset ReadDataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    const auto path = dir / "calib.json";
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingStream, path.string());
    try {
      const json j = json::parse(ReadFile(path));
      const json& cam = j.at("camera");
      ds.calib.camera = {cam.at("fx").get<double>(), cam.at("fy").get<double>(),
                         cam.at("cx").get<double>(), cam.at("cy").get<double>(),
                         cam.at("width").get<int>(), cam.at("height").get<int>()};
      ds.calib.T_imu_cam = PoseFromJson(j.at("T_imu_cam"));
      ds.calib.T_imu_lidar = PoseFromJson(j.at("T_imu_lidar"));
      ds.calib.gravity = Vec3FromJson(j.at("gravity"));
      const json& imu = j.at("imu");
      ds.calib.imu_rate_hz = imu.at("rate_hz").get<int>();
      ds.calib.imu.gyro_noise_density = imu.at("gyro_noise_density").get<double>();
      ds.calib.imu.accel_noise_density = imu.at("accel_noise_density").get<double>();
      ds.calib.imu.gyro_bias = Vec3FromJson(imu.at("gyro_bias"));
      ds.calib.imu.accel_bias = Vec3FromJson(imu.at("accel_bias"));
      ds.calib.camera.Validate();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kFormatError, path.string() + " at byte 0: " + e.what());
    }
  }
  {
    LineCursor cur = OpenStream(dir, "gt.tum");
    std::string_view line;
    while (cur.Next(line)) {
      if (line.empty() || line.front() == '#') continue;
      const auto v = ParseRow(cur, line, ' ', 8);
      if (!ds.ground_truth.empty() && !(v[0] > ds.ground_truth.back().t)) {
        cur.Fail("timestamps not increasing");
      }
      ds.ground_truth.push_back(
          {v[0], Pose{Rotation(v[7], v[4], v[5], v[6]), Vec3(v[1], v[2], v[3])}});
    }
  }
  {
    LineCursor cur = OpenStream(dir, "imu.csv");
    std::string_view line;
    if (!cur.Next(line) || line != "t,gx,gy,gz,ax,ay,az") {
      cur.Fail("expected header 't,gx,gy,gz,ax,ay,az'");
    }
    while (cur.Next(line)) {
      if (line.empty()) continue;
      const auto v = ParseRow(cur, line, ',', 7);
      if (!ds.imu.empty() && !(v[0] > ds.imu.back().t)) cur.Fail("timestamps not increasing");
      ds.imu.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
    }
  }
  for (const auto& [t, name] : ReadIndex(OpenStream(dir, "images.csv"))) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingStream, path.string());
    ds.image_times.push_back(t);
    ds.images.push_back(ReadPgm(path));
  }
  for (const auto& [t, name] : ReadIndex(OpenStream(dir, "lidar.csv"))) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingStream, path.string());
    ds.scans.push_back({t, DecodeScan(ReadFile(path), path.string())});
  }
  return ds;
}

}  // namespace livobench
