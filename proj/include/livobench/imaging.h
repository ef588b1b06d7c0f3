#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "livobench/geometry.h"

namespace livobench {

/// Row-major 8-bit grayscale image.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0);
  GrayImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y) const { return data_[y * width_ + x]; }
  std::uint8_t& at(int x, int y) { return data_[y * width_ + x]; }

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  bool operator==(const GrayImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Image pyramid. Pixel centers follow the area convention:
/// x_L = (x_0 + 0.5) / s^L - 0.5.
struct Pyramid {
  std::vector<GrayImage> levels;
  double scale_factor = 2.0;

  int size() const { return static_cast<int>(levels.size()); }
  double LevelScale(int level) const;
  Vec2 ToLevel(const Vec2& uv0, int level) const;
  Vec2 ToLevel0(const Vec2& uv, int level) const;
};

/// Box-filter pyramid. Throws kTooManyLevels if any level would fall below
/// 16 px per side, kInvalidArgument for levels < 1 or scale_factor <= 1.
Pyramid BuildPyramid(const GrayImage& img, int levels, double scale_factor);

/// Bilinear sample. Valid for 0 <= x <= width-1, 0 <= y <= height-1,
/// otherwise throws kOutOfBounds.
double SampleBilinear(const GrayImage& img, double x, double y);

/// Central difference of bilinear samples at +-1 px. Valid on
/// [1, width-2] x [1, height-2], otherwise kOutOfBounds.
Vec2 GradientAt(const GrayImage& img, double x, double y);

struct Patch {
  int size = 8;
  int level = 0;
  std::vector<double> values;  // row-major, size * size

  double at(int col, int row) const { return values[row * size + col]; }
};

/// Patch lattice offsets d = (i - size/2, j - size/2) for i, j in [0, size).
/// Samples ref at center_ref + A * d. `ref` is the image of `level`; A maps
/// current-frame lattice offsets into reference pixels and is invariant
/// across levels when both frames use the same level. Throws
/// kWarpOutOfBounds if any sample leaves the image.
Patch WarpPatchAffine(const GrayImage& ref, const Mat2& A,
                      const Vec2& center_ref, int size, int level);

/// Plane-induced affine warp A_cur_ref at uv_ref: the Jacobian of the
/// reference->current pixel transfer through the plane (p_ref, n_ref),
/// by central differences over +-1 px. p_ref and n_ref are in the
/// reference camera frame. Throws kDegenerateGeometry for grazing planes.
Mat2 ComputeAffineWarp(const CameraIntrinsics& k, const Pose& T_cur_ref,
                       const Vec3& p_ref, const Vec3& n_ref,
                       const Vec2& uv_ref);

/// Binary PGM (P5, maxval 255).
GrayImage ReadPgm(const std::filesystem::path& path);
void WritePgm(const std::filesystem::path& path, const GrayImage& img);
std::vector<std::uint8_t> EncodePgm(const GrayImage& img);

}  // namespace livobench
