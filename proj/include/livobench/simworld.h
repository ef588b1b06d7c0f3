#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "livobench/geometry.h"
#include "livobench/imaging.h"

namespace livobench {

inline const Vec3 kGravity(0.0, 0.0, -9.81);

/// C1-smooth procedural texture: a seeded sum of plane waves and
/// egg-crate products, bounded to [0, 255].
class Texture {
 public:
  Texture(std::uint64_t seed, double scale);
  double operator()(double u, double v) const;
  Vec2 Gradient(double u, double v) const;

 private:
  struct Wave {
    double kx, ky, amplitude, phase;
    bool product;  // amplitude * sin(kx u + phase) * sin(ky v + phase / 2)
  };
  std::vector<Wave> waves_;
};

/// Textured rectangle. The plane frame has its origin at the rectangle
/// center, x/y spanning the surface and z along the normal.
struct TexturedPlane {
  Pose pose;
  Vec2 half_extent{1.0, 1.0};
  std::uint64_t texture_seed = 0;
  double texture_scale = 1.0;
};

class Scene {
 public:
  struct Hit {
    double range;
    Vec3 point;
    Vec3 normal;
    double intensity;
    int plane;
  };

  void AddPlane(const TexturedPlane& plane);
  const std::vector<TexturedPlane>& planes() const { return planes_; }

  /// Nearest intersection along origin + s * dir (dir unit), s in
  /// (min_range, max_range].
  std::optional<Hit> Raycast(const Vec3& origin, const Vec3& dir,
                             double max_range, double min_range = 0.0) const;

  double TextureAt(int plane, const Vec3& world_point) const;

 private:
  std::vector<TexturedPlane> planes_;
  std::vector<Texture> textures_;
  std::vector<Mat3> rotations_;
};

struct IlluminationProfile {
  double gain = 1.0;
  double offset = 0.0;
  std::optional<double> step_time;
  double step_gain = 1.0;
  double vignette_strength = 0.0;

  double Gain(double t) const {
    return step_time && t >= *step_time ? step_gain : gain;
  }
  double Offset(double) const { return offset; }
};

struct ImuNoise {
  double gyro_noise_density = 0.0;   // rad/s/sqrt(Hz)
  double accel_noise_density = 0.0;  // m/s^2/sqrt(Hz)
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

struct SensorRig {
  CameraIntrinsics camera{400.0, 400.0, 320.0, 240.0, 640, 480};
  Pose T_imu_cam;
  Pose T_imu_lidar;
  int lidar_rows = 65;
  int lidar_cols = 720;
  double lidar_min_elevation_deg = -40.0;
  double lidar_max_elevation_deg = 40.0;
  double lidar_max_range = 15.0;
  double lidar_min_range = 0.3;
  int imu_rate_hz = 200;
  int camera_rate_hz = 10;
  int lidar_rate_hz = 10;
  ImuNoise imu;

  static SensorRig Default();
  /// Throws kInvalidArgument unless the IMU rate is a whole multiple of the
  /// camera and LiDAR rates.
  void Validate() const;
};

enum class TrajectoryKind { kCircle, kLissajous, kCorridor };
enum class YawMode { kTangent, kFixedDown };

TrajectoryKind ParseTrajectoryKind(const std::string& name);

struct KinematicSample {
  double t = 0.0;
  Pose pose;  // body (IMU) in world
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();  // body frame
};

/// Analytic C2 body trajectory.
class TrajectoryModel {
 public:
  TrajectoryModel(TrajectoryKind kind, double duration, double speed,
                  YawMode yaw_mode, const Vec3& center);

  KinematicSample At(double t) const;
  /// Samples at k / rate_hz for every k with k / rate_hz <= duration.
  std::vector<KinematicSample> Sample(double rate_hz) const;

  double duration() const { return duration_; }
  TrajectoryKind kind() const { return kind_; }
  YawMode yaw_mode() const { return yaw_mode_; }
  double circle_radius() const { return radius_; }

 private:
  TrajectoryKind kind_;
  double duration_;
  double speed_;
  YawMode yaw_mode_;
  Vec3 center_;
  double radius_ = 5.0;
  double omega_ = 0.0;
};

/// Throws kUnknownKind for unknown trajectory kinds and kInvalidArgument for
/// duration < 5 s or speed <= 0.
TrajectoryModel GenerateTrajectory(const std::string& kind, double duration,
                                   double speed, YawMode yaw_mode,
                                   const Vec3& center = Vec3(0, 0, 1.5));

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

struct LidarPoint {
  float x, y, z, intensity;
  bool operator==(const LidarPoint&) const = default;
};

struct LidarScan {
  double t = 0.0;
  std::vector<LidarPoint> points;  // sensor frame
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

/// IMU samples at k / imu_rate up to `end_time`.
std::vector<ImuSample> SynthImu(const TrajectoryModel& traj, const SensorRig& rig,
                                std::uint64_t seed, double end_time);

std::vector<LidarPoint> SynthLidar(const Scene& scene, const Pose& body_pose,
                                   const SensorRig& rig);

GrayImage RenderImage(const Scene& scene, const Pose& body_pose,
                      const SensorRig& rig, const IlluminationProfile& illum,
                      double t);

struct Calibration {
  CameraIntrinsics camera;
  Pose T_imu_cam;
  Pose T_imu_lidar;
  Vec3 gravity = kGravity;
  ImuNoise imu;
  int imu_rate_hz = 200;
};

struct Dataset {
  Calibration calib;
  std::vector<StampedPose> ground_truth;  // body poses at camera timestamps
  std::vector<ImuSample> imu;
  std::vector<double> image_times;
  std::vector<GrayImage> images;
  std::vector<LidarScan> scans;
};

/// Writes the dataset directory layout. Every file goes through
/// write-then-rename.
void WriteDataset(const std::filesystem::path& dir, const Dataset& ds);

/// Reads and validates a dataset directory: monotone timestamps, existing
/// image/scan files. Throws kMissingStream or kFormatError (with file and
/// byte offset).
Dataset ReadDataset(const std::filesystem::path& dir);

/// Scenario catalog: baseline, lowlight, overexposure, illum-step,
/// ground-facing, planar.
const std::vector<std::string>& ScenarioNames();

struct ScenarioOptions {
  std::uint64_t seed = 0;
  double duration = 30.0;
  bool noise_free = false;
  double illum_step_gain = 1.6;
};

struct Scenario {
  std::string name;
  Scene scene;
  SensorRig rig;
  IlluminationProfile illumination;
  TrajectoryModel trajectory;
};

/// Throws kUnknownKind for names outside the catalog.
Scenario MakeScenario(const std::string& name, const ScenarioOptions& options);

/// Renders every stream of a scenario. `threads` > 1 renders frames in
/// parallel; the output is identical to the serial path.
Dataset GenerateDataset(const Scenario& scenario, std::uint64_t seed,
                        int threads = 1);

}  // namespace livobench
