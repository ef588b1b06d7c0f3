#include "livobench/features.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <numbers>

#include "livobench/error.h"
#include "livobench/random.h"

namespace livobench {

namespace {

constexpr int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},
                                {2, 2},  {1, 3},  {0, 3},  {-1, 3}, {-2, 2}, {-3, 1},
                                {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

// Returns the segment-test score (0 if not a corner).
int FastScore(const GrayImage& img, int x, int y, int threshold) {
  const int p = img.at(x, y);
  int diff[16];
  int sign[16];
  for (int k = 0; k < 16; ++k) {
    const int v = img.at(x + kCircle[k][0], y + kCircle[k][1]);
    diff[k] = v - p;
    sign[k] = diff[k] > threshold ? 1 : (diff[k] < -threshold ? -1 : 0);
  }
  int best = 0;
  int k = 0;
  // Find a start index that breaks a run so circular runs are not split.
  int start = -1;
  for (int i = 0; i < 16; ++i) {
    if (sign[i] != sign[(i + 15) % 16]) {
      start = i;
      break;
    }
  }
  if (start < 0) {
    if (sign[0] == 0) return 0;
    for (int i = 0; i < 16; ++i) best += std::abs(diff[i]);
    return best;
  }
  while (k < 16) {
    const int i0 = (start + k) % 16;
    const int s = sign[i0];
    int len = 0;
    int sum = 0;
    while (k < 16 && sign[(start + k) % 16] == s) {
      sum += std::abs(diff[(start + k) % 16]);
      ++len;
      ++k;
    }
    if (s != 0 && len >= 9) best = std::max(best, sum);
  }
  return best;
}

bool CompassPrefilter(const GrayImage& img, int x, int y, int threshold) {
  const int p = img.at(x, y);
  int brighter = 0, darker = 0;
  for (int k = 0; k < 16; k += 4) {
    const int v = img.at(x + kCircle[k][0], y + kCircle[k][1]);
    brighter += v > p + threshold;
    darker += v < p - threshold;
  }
  return brighter >= 2 || darker >= 2;
}

// BRIEF sampling pattern: 256 pairs inside a radius-13 disk, drawn once from a
// fixed seed at compile time.
constexpr int kPatternRadius = 13;
constexpr int kSmoothHalf = 3;

using PairTable = std::array<std::array<int, 4>, 256>;

constexpr PairTable MakePattern() {
  PairTable t{};
  SplitMix64 rng(0x0B1EFB1EFULL);
  auto draw = [&rng](int& x, int& y) {
    while (true) {
      x = static_cast<int>(rng.Below(2 * kPatternRadius + 1)) - kPatternRadius;
      y = static_cast<int>(rng.Below(2 * kPatternRadius + 1)) - kPatternRadius;
      if (x * x + y * y <= kPatternRadius * kPatternRadius) return;
    }
  };
  for (auto& pair : t) {
    do {
      draw(pair[0], pair[1]);
      draw(pair[2], pair[3]);
    } while (pair[0] == pair[2] && pair[1] == pair[3]);
  }
  return t;
}

constexpr PairTable kPattern = MakePattern();
constexpr int kAngleBins = 30;

// Pattern rotated to each of the 30 angle bins, rounded to integer offsets.
const std::array<PairTable, kAngleBins>& RotatedPatterns() {
  static const std::array<PairTable, kAngleBins> tables = [] {
    std::array<PairTable, kAngleBins> out{};
    for (int b = 0; b < kAngleBins; ++b) {
      const double a = 2.0 * std::numbers::pi * b / kAngleBins;
      const double c = std::cos(a), s = std::sin(a);
      for (int i = 0; i < 256; ++i) {
        for (int j = 0; j < 2; ++j) {
          const double px = kPattern[i][2 * j], py = kPattern[i][2 * j + 1];
          out[b][i][2 * j] = static_cast<int>(std::lround(c * px - s * py));
          out[b][i][2 * j + 1] = static_cast<int>(std::lround(s * px + c * py));
        }
      }
    }
    return out;
  }();
  return tables;
}

int AngleBin(double angle) {
  const double turn = angle / (2.0 * std::numbers::pi);
  int b = static_cast<int>(std::lround(turn * kAngleBins)) % kAngleBins;
  return b < 0 ? b + kAngleBins : b;
}

constexpr int kDescriptorReach = kPatternRadius + kSmoothHalf + 2;

class IntegralImage {
 public:
  explicit IntegralImage(const GrayImage& img)
      : w_(img.width() + 1), sums_((img.width() + 1) * (img.height() + 1), 0) {
    for (int y = 0; y < img.height(); ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < img.width(); ++x) {
        row += img.at(x, y);
        sums_[(y + 1) * w_ + x + 1] = sums_[y * w_ + x + 1] + row;
      }
    }
  }
  // Sum over the 7x7 box centered at (x, y).
  std::int64_t Box(int x, int y) const {
    const int x0 = x - kSmoothHalf, y0 = y - kSmoothHalf;
    const int x1 = x + kSmoothHalf + 1, y1 = y + kSmoothHalf + 1;
    return sums_[y1 * w_ + x1] - sums_[y0 * w_ + x1] - sums_[y1 * w_ + x0] +
           sums_[y0 * w_ + x0];
  }

 private:
  int w_;
  std::vector<std::int64_t> sums_;
};

Descriptor Describe(const IntegralImage& integral, int width, int height, int cx,
                    int cy, double angle) {
  if (cx < kDescriptorReach || cy < kDescriptorReach ||
      cx > width - 1 - kDescriptorReach || cy > height - 1 - kDescriptorReach) {
    throw Error(ErrorCode::kTooCloseToBorder,
                "keypoint (" + std::to_string(cx) + "," + std::to_string(cy) + ")");
  }
  const PairTable& table = RotatedPatterns()[AngleBin(angle)];
  Descriptor d;
  d.kind = DescriptorKind::kBinary;
  d.bits.assign(kDescriptorBytes, 0);
  for (int i = 0; i < 256; ++i) {
    const auto& p = table[i];
    const auto a = integral.Box(cx + p[0], cy + p[1]);
    const auto b = integral.Box(cx + p[2], cy + p[3]);
    if (a < b) d.bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return d;
}

}  // namespace

std::vector<Keypoint> DetectFast(const GrayImage& img, int threshold, int border) {
  border = std::max(border, 3);
  const int w = img.width(), h = img.height();
  std::vector<Keypoint> out;
  if (w <= 2 * border || h <= 2 * border) return out;
  std::vector<int> score(static_cast<std::size_t>(w) * h, 0);
  for (int y = border; y < h - border; ++y) {
    for (int x = border; x < w - border; ++x) {
      if (!CompassPrefilter(img, x, y, threshold)) continue;
      score[y * w + x] = FastScore(img, x, y, threshold);
    }
  }
  for (int y = border; y < h - border; ++y) {
    for (int x = border; x < w - border; ++x) {
      const int s = score[y * w + x];
      if (s == 0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int n = score[(y + dy) * w + x + dx];
          // Ties: the earlier pixel in raster order wins.
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (n > s || (earlier && n == s)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) out.push_back({double(x), double(y), 0, double(s), 0.0});
    }
  }
  return out;
}

double IntensityCentroidAngle(const GrayImage& img, int x, int y) {
  constexpr int r = 15;
  double m10 = 0.0, m01 = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = std::clamp(y + dy, 0, img.height() - 1);
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      const int xx = std::clamp(x + dx, 0, img.width() - 1);
      const double v = img.at(xx, yy);
      m10 += dx * v;
      m01 += dy * v;
    }
  }
  return std::atan2(m01, m10);
}

std::vector<Keypoint> DetectOrientedFast(const Pyramid& pyr, const DetectorParams& params) {
  std::vector<Keypoint> out;
  if (pyr.size() == 0 || params.max_features <= 0) return out;
  double total_area = 0.0;
  for (const auto& lvl : pyr.levels) total_area += double(lvl.width()) * lvl.height();
  std::vector<int> quota(pyr.size());
  int assigned = 0;
  for (int l = 0; l < pyr.size(); ++l) {
    const double area = double(pyr.levels[l].width()) * pyr.levels[l].height();
    quota[l] = static_cast<int>(std::floor(params.max_features * area / total_area));
    assigned += quota[l];
  }
  quota[0] += params.max_features - assigned;

  for (int l = 0; l < pyr.size(); ++l) {
    const GrayImage& img = pyr.levels[l];
    std::vector<Keypoint> kps = DetectFast(img, params.threshold, params.border);
    std::stable_sort(kps.begin(), kps.end(),
                     [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
    if (static_cast<int>(kps.size()) > quota[l]) kps.resize(quota[l]);
    for (Keypoint& kp : kps) {
      const int ix = static_cast<int>(kp.x), iy = static_cast<int>(kp.y);
      kp.angle = IntensityCentroidAngle(img, ix, iy);
      const Vec2 uv0 = pyr.ToLevel0(Vec2(kp.x, kp.y), l);
      kp.x = uv0.x();
      kp.y = uv0.y();
      kp.level = l;
      out.push_back(kp);
    }
  }
  return out;
}

Descriptor ComputeDescriptor(const GrayImage& img, double x, double y, double angle) {
  const IntegralImage integral(img);
  return Describe(integral, img.width(), img.height(), static_cast<int>(std::lround(x)),
                  static_cast<int>(std::lround(y)), angle);
}

std::vector<Descriptor> DescribeKeypoints(const Pyramid& pyr,
                                          std::vector<Keypoint>& keypoints) {
  std::vector<std::unique_ptr<IntegralImage>> integrals(pyr.size());
  std::vector<Descriptor> out;
  std::vector<Keypoint> kept;
  out.reserve(keypoints.size());
  kept.reserve(keypoints.size());
  for (const Keypoint& kp : keypoints) {
    if (kp.level < 0 || kp.level >= pyr.size()) continue;
    const GrayImage& img = pyr.levels[kp.level];
    if (!integrals[kp.level]) integrals[kp.level] = std::make_unique<IntegralImage>(img);
    const Vec2 uv = pyr.ToLevel(Vec2(kp.x, kp.y), kp.level);
    const int cx = static_cast<int>(std::lround(uv.x()));
    const int cy = static_cast<int>(std::lround(uv.y()));
    if (cx < kDescriptorReach || cy < kDescriptorReach ||
        cx > img.width() - 1 - kDescriptorReach || cy > img.height() - 1 - kDescriptorReach) {
      continue;
    }
    out.push_back(Describe(*integrals[kp.level], img.width(), img.height(), cx, cy, kp.angle));
    kept.push_back(kp);
  }
  keypoints = std::move(kept);
  return out;
}

int Hamming(const Descriptor& a, const Descriptor& b) {
  if (a.kind != DescriptorKind::kBinary || b.kind != DescriptorKind::kBinary ||
      a.bits.size() != b.bits.size()) {
    throw Error(ErrorCode::kKindMismatch, "hamming needs two binary descriptors of equal length");
  }
  int bits = 0;
  std::size_t i = 0;
  for (; i + 8 <= a.bits.size(); i += 8) {
    std::uint64_t x, y;
    std::memcpy(&x, a.bits.data() + i, 8);
    std::memcpy(&y, b.bits.data() + i, 8);
    bits += std::popcount(x ^ y);
  }
  for (; i < a.bits.size(); ++i) {
    bits += std::popcount(static_cast<unsigned>(a.bits[i] ^ b.bits[i]));
  }
  return bits;
}

double DescriptorDistance(const Descriptor& a, const Descriptor& b) {
  if (a.kind == DescriptorKind::kBinary) return Hamming(a, b);
  if (b.kind != DescriptorKind::kFloat || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kKindMismatch, "float descriptors of different kind or length");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) dot += double(a.values[i]) * b.values[i];
  return 1.0 - dot;
}

std::vector<Match> MatchMutual(const std::vector<Descriptor>& a,
                               const std::vector<Descriptor>& b, double max_distance,
                               double min_confidence) {
  std::vector<Match> out;
  if (a.empty() || b.empty()) return out;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> best_a(a.size(), -1), best_b(b.size(), -1);
  std::vector<double> dist_a(a.size(), inf), dist_b(b.size(), inf);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = DescriptorDistance(a[i], b[j]);
      if (d < dist_a[i]) {
        dist_a[i] = d;
        best_a[i] = static_cast<int>(j);
      }
      if (d < dist_b[j]) {
        dist_b[j] = d;
        best_b[j] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int j = best_a[i];
    if (j < 0 || best_b[j] != static_cast<int>(i)) continue;
    const double d = dist_a[i];
    if (d > max_distance) continue;
    const double conf = max_distance > 0.0 ? 1.0 - d / max_distance : 1.0;
    if (conf < min_confidence) continue;
    out.push_back({static_cast<int>(i), j, d, conf});
  }
  return out;
}

}  // namespace livobench
