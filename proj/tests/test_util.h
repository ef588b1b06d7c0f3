#pragma once

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "livobench/error.h"
#include "livobench/geometry.h"
#include "livobench/random.h"

namespace livobench::testing {

#define EXPECT_LB_ERROR(stmt, expected_code)                                  \
  do {                                                                        \
    try {                                                                     \
      stmt;                                                                   \
      ADD_FAILURE() << "no exception from " #stmt;                            \
    } catch (const ::livobench::Error& e) {                                   \
      EXPECT_EQ(e.code(), expected_code) << e.what();                         \
    }                                                                         \
  } while (0)

inline Vec3 RandomVec(SplitMix64& rng, double scale = 1.0) {
  return Vec3(rng.Uniform(-scale, scale), rng.Uniform(-scale, scale), rng.Uniform(-scale, scale));
}

inline Rotation RandomRotation(SplitMix64& rng, double max_angle = 3.0) {
  Vec3 axis = RandomVec(rng).normalized();
  return So3Exp(axis * rng.Uniform(0.0, max_angle));
}

inline Pose RandomPose(SplitMix64& rng, double t_scale = 5.0) {
  return Pose{RandomRotation(rng), RandomVec(rng, t_scale)};
}

inline double PoseDistance(const Pose& a, const Pose& b) {
  return (a.translation - b.translation).norm() + AngleBetween(a.rotation, b.rotation);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path TempDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("livobench_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline CameraIntrinsics DefaultCamera() { return {400.0, 400.0, 320.0, 240.0, 640, 480}; }

}  // namespace livobench::testing
