#include "livobench/imaging.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "livobench/error.h"

namespace livobench {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width),
      height_(height),
      data_(static_cast<std::size_t>(width) * height, fill) {}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::kInvalidArgument,
                "image data length does not match width x height");
  }
}

double Pyramid::LevelScale(int level) const {
  return std::pow(scale_factor, level);
}

Vec2 Pyramid::ToLevel(const Vec2& uv0, int level) const {
  const double s = LevelScale(level);
  return (uv0.array() + 0.5) / s - 0.5;
}

Vec2 Pyramid::ToLevel0(const Vec2& uv, int level) const {
  const double s = LevelScale(level);
  return (uv.array() + 0.5) * s - 0.5;
}

namespace {

GrayImage Halve(const GrayImage& src, int w, int h) {
  GrayImage dst(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sum = src.at(2 * x, 2 * y) + src.at(2 * x + 1, 2 * y) +
                      src.at(2 * x, 2 * y + 1) + src.at(2 * x + 1, 2 * y + 1);
      dst.at(x, y) = static_cast<std::uint8_t>((sum + 2) / 4);
    }
  }
  return dst;
}

// Area-weighted box filter for non-integer ratios. Destination pixel i covers
// the source interval [i*r, (i+1)*r), clipped to the source extent.
GrayImage AreaResample(const GrayImage& src, int w, int h, double r) {
  struct Span {
    int first;
    std::vector<double> weights;
  };
  auto spans = [r](int n_dst, int n_src) {
    std::vector<Span> out(n_dst);
    for (int i = 0; i < n_dst; ++i) {
      const double a = i * r;
      const double b = std::min((i + 1) * r, static_cast<double>(n_src));
      const int first = static_cast<int>(std::floor(a));
      const int last = std::min(static_cast<int>(std::ceil(b)) - 1, n_src - 1);
      Span s{first, {}};
      double total = 0.0;
      for (int k = first; k <= last; ++k) {
        const double wk = std::min<double>(k + 1, b) - std::max<double>(k, a);
        s.weights.push_back(std::max(wk, 0.0));
        total += s.weights.back();
      }
      for (double& wk : s.weights) wk /= total;
      out[i] = std::move(s);
    }
    return out;
  };
  const auto xs = spans(w, src.width());
  const auto ys = spans(h, src.height());
  GrayImage dst(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < ys[y].weights.size(); ++j) {
        const int sy = ys[y].first + static_cast<int>(j);
        double row = 0.0;
        for (std::size_t i = 0; i < xs[x].weights.size(); ++i) {
          row += xs[x].weights[i] * src.at(xs[x].first + static_cast<int>(i), sy);
        }
        acc += ys[y].weights[j] * row;
      }
      dst.at(x, y) = static_cast<std::uint8_t>(
          std::clamp(std::lround(acc), 0L, 255L));
    }
  }
  return dst;
}

}  // namespace

Pyramid BuildPyramid(const GrayImage& img, int levels, double scale_factor) {
  if (levels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "levels must be >= 1");
  }
  if (!(scale_factor > 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "scale_factor must be > 1");
  }
  Pyramid pyr;
  pyr.scale_factor = scale_factor;
  pyr.levels.reserve(levels);
  pyr.levels.push_back(img);
  for (int level = 1; level < levels; ++level) {
    const double s = std::pow(scale_factor, level);
    const int w = static_cast<int>(std::floor(img.width() / s + 1e-9));
    const int h = static_cast<int>(std::floor(img.height() / s + 1e-9));
    if (w < 16 || h < 16) {
      throw Error(ErrorCode::kTooManyLevels,
                  "level " + std::to_string(level) + " would be " +
                      std::to_string(w) + "x" + std::to_string(h));
    }
    const GrayImage& prev = pyr.levels.back();
    if (scale_factor == 2.0 && 2 * w <= prev.width() && 2 * h <= prev.height()) {
      pyr.levels.push_back(Halve(prev, w, h));
    } else {
      pyr.levels.push_back(AreaResample(prev, w, h, scale_factor));
    }
  }
  return pyr;
}

double SampleBilinear(const GrayImage& img, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width() - 1 &&
        y <= img.height() - 1)) {
    throw Error(ErrorCode::kOutOfBounds, "bilinear sample outside image");
  }
  const int x0 = std::min(static_cast<int>(x), img.width() - 1);
  const int y0 = std::min(static_cast<int>(y), img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * img.at(x0, y0) + ax * img.at(x1, y0);
  const double bottom = (1.0 - ax) * img.at(x0, y1) + ax * img.at(x1, y1);
  return (1.0 - ay) * top + ay * bottom;
}

Vec2 GradientAt(const GrayImage& img, double x, double y) {
  if (!(x >= 1.0 && y >= 1.0 && x <= img.width() - 2 &&
        y <= img.height() - 2)) {
    throw Error(ErrorCode::kOutOfBounds, "gradient sample outside image");
  }
  return {0.5 * (SampleBilinear(img, x + 1.0, y) - SampleBilinear(img, x - 1.0, y)),
          0.5 * (SampleBilinear(img, x, y + 1.0) - SampleBilinear(img, x, y - 1.0))};
}

Patch WarpPatchAffine(const GrayImage& ref, const Mat2& A,
                      const Vec2& center_ref, int size, int level) {
  if (size < 4 || size % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "patch size must be even and >= 4");
  }
  Patch patch{size, level, std::vector<double>(size * size)};
  const int half = size / 2;
  const double xmax = ref.width() - 1;
  const double ymax = ref.height() - 1;
  for (int j = 0; j < size; ++j) {
    for (int i = 0; i < size; ++i) {
      const Vec2 d(i - half, j - half);
      const Vec2 p = center_ref + A * d;
      if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= xmax && p.y() <= ymax)) {
        throw Error(ErrorCode::kWarpOutOfBounds, "warped patch leaves image");
      }
      patch.values[j * size + i] = SampleBilinear(ref, p.x(), p.y());
    }
  }
  return patch;
}

Mat2 ComputeAffineWarp(const CameraIntrinsics& k, const Pose& T_cur_ref,
                       const Vec3& p_ref, const Vec3& n_ref,
                       const Vec2& uv_ref) {
  const double plane_d = n_ref.dot(p_ref);
  auto transfer = [&](const Vec2& uv) -> Vec2 {
    const Vec3 ray = Backproject(k, uv, 1.0).normalized();
    const double cosine = n_ref.dot(ray);
    if (std::abs(cosine) < 0.05) {
      throw Error(ErrorCode::kDegenerateGeometry,
                  "plane nearly parallel to viewing ray");
    }
    const Vec3 x_ref = ray * (plane_d / cosine);
    return Project(k, Transform(T_cur_ref, x_ref));
  };
  Mat2 a;
  a.col(0) = 0.5 * (transfer(uv_ref + Vec2(1, 0)) - transfer(uv_ref - Vec2(1, 0)));
  a.col(1) = 0.5 * (transfer(uv_ref + Vec2(0, 1)) - transfer(uv_ref - Vec2(0, 1)));
  return a;
}

std::vector<std::uint8_t> EncodePgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width()) + " " +
                             std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data().begin(), img.data().end());
  return out;
}

void WritePgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const auto bytes = EncodePgm(img);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

GrayImage ReadPgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw Error(ErrorCode::kFormatError,
                path.string() + " at byte 0: expected binary P5 with maxval 255");
  }
  f.get();  // single whitespace after maxval
  const auto offset = static_cast<long long>(f.tellg());
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size())) {
    throw Error(ErrorCode::kFormatError,
                path.string() + " at byte " +
                    std::to_string(offset + f.gcount()) + ": truncated pixel data");
  }
  return GrayImage(w, h, std::move(data));
}

}  // namespace livobench
