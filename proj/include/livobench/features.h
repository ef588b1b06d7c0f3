#pragma once

#include <cstdint>
#include <vector>

#include "livobench/imaging.h"

namespace livobench {

struct Keypoint {
  double x = 0.0;  // level-0 pixels
  double y = 0.0;
  int level = 0;
  double score = 0.0;
  double angle = 0.0;  // radians
};

enum class DescriptorKind : std::uint8_t { kBinary = 0, kFloat = 1 };

struct Descriptor {
  DescriptorKind kind = DescriptorKind::kBinary;
  std::vector<std::uint8_t> bits;  // kBinary payload
  std::vector<float> values;       // kFloat payload, L2-normalized

  bool operator==(const Descriptor&) const = default;
};

struct Match {
  int idx_a = 0;
  int idx_b = 0;
  double distance = 0.0;
  double score = 0.0;
};

struct DetectorParams {
  int threshold = 20;
  int max_features = 1000;
  int border = 31;
  int levels = 8;
  double scale_factor = 1.2;
};

/// Raw FAST-9/16 corners of one image (3x3 non-maximum suppression), in
/// that image's pixel coordinates, level 0, angle 0. Pixels closer than
/// `border` to an edge are skipped.
std::vector<Keypoint> DetectFast(const GrayImage& img, int threshold, int border);

/// Oriented multi-level FAST on a detection pyramid. Per-level quota is
/// proportional to level area; orientation by intensity centroid.
std::vector<Keypoint> DetectOrientedFast(const Pyramid& pyr, const DetectorParams& params);

/// Intensity-centroid angle over a radius-15 disk centered at (x, y).
double IntensityCentroidAngle(const GrayImage& img, int x, int y);

inline constexpr int kDescriptorBytes = 32;

/// Rotated BRIEF on one image. (x, y) are coordinates in `img`.
/// Throws kTooCloseToBorder when the pattern would leave the image.
Descriptor ComputeDescriptor(const GrayImage& img, double x, double y, double angle);

/// Describes keypoints detected on `pyr`. Keypoints whose pattern does not
/// fit are removed from `keypoints`; the result is index-aligned with it.
std::vector<Descriptor> DescribeKeypoints(const Pyramid& pyr,
                                          std::vector<Keypoint>& keypoints);

/// Popcount of XOR. Throws kKindMismatch unless both are binary of equal length.
int Hamming(const Descriptor& a, const Descriptor& b);

/// Hamming bits for binary descriptors, 1 - cosine for float ones.
double DescriptorDistance(const Descriptor& a, const Descriptor& b);

/// Mutual nearest neighbours (ties to the lower index) with
/// distance <= max_distance and confidence 1 - d/max_distance >= min_confidence.
std::vector<Match> MatchMutual(const std::vector<Descriptor>& a,
                               const std::vector<Descriptor>& b,
                               double max_distance, double min_confidence);

}  // namespace livobench
