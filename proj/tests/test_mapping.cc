#include "livobench/mapping.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "livobench/simworld.h"
#include "test_util.h"

namespace livobench {
namespace {

using testing::DefaultCamera;

std::deque<Vec3> PlanePoints(SplitMix64& rng, const Vec3& n, double d, int count, double noise) {
  const Vec3 nn = n.normalized();
  const Vec3 a = nn.unitOrthogonal(), b = nn.cross(a);
  std::deque<Vec3> pts;
  for (int i = 0; i < count; ++i) {
    const Vec3 p = d * nn + rng.Uniform(-0.25, 0.25) * a + rng.Uniform(-0.25, 0.25) * b;
    pts.push_back(p + noise * rng.Gaussian() * nn);
  }
  return pts;
}

double AngleDeg(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized())))) * 180.0 /
         std::numbers::pi;
}

TEST(FitPlane, ExactPlane) {
  SplitMix64 rng(1);
  const Vec3 n(1, 2, -0.5);
  const auto pts = PlanePoints(rng, n, 3.0, 20, 0.0);
  const VoxelPlane pl = FitPlane(pts);
  EXPECT_TRUE(pl.valid);
  EXPECT_NEAR(pl.planarity, 1.0, 1e-9);
  EXPECT_LT(AngleDeg(pl.normal, n), 1e-6);
  EXPECT_NEAR(pl.normal.norm(), 1.0, 1e-12);
  EXPECT_NEAR(pl.normal.dot(pl.centroid) * (pl.normal.dot(n) > 0 ? 1 : -1), 3.0, 1e-9);
}

TEST(FitPlane, TooFewOrDegenerate) {
  SplitMix64 rng(2);
  EXPECT_FALSE(FitPlane(PlanePoints(rng, Vec3::UnitZ(), 1.0, 5, 0.0)).valid);
  std::deque<Vec3> line;
  for (int i = 0; i < 10; ++i) line.push_back(Vec3(i * 0.1, 0, 0));
  EXPECT_FALSE(FitPlane(line).valid);
  // A cube's corners are not planar.
  std::deque<Vec3> blob;
  for (int i = 0; i < 8; ++i) blob.push_back(Vec3(i & 1, (i >> 1) & 1, (i >> 2) & 1));
  EXPECT_FALSE(FitPlane(blob).valid);
}

TEST(FitPlane, NoisyPlaneWithinFiveDegrees) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 n = testing::RandomVec(rng, 1.0);
    const VoxelPlane pl = FitPlane(PlanePoints(rng, n, 1.0, 50, 0.01));
    EXPECT_TRUE(pl.valid);
    EXPECT_LT(AngleDeg(pl.normal, n), 5.0);
  }
}

TEST(VoxelMap, KeysAndCapacity) {
  VoxelMap map(0.5, 10);
  EXPECT_EQ(map.KeyOf(Vec3(-0.01, 0.49, 0.5)), (VoxelKey{-1, 0, 1}));
  EXPECT_TRUE(map.CenterOf({-1, 0, 1}).isApprox(Vec3(-0.25, 0.25, 0.75)));
  std::vector<Vec3> pts;
  for (int i = 0; i < 25; ++i) pts.push_back(Vec3(0.01 * i, 0.02 * (i % 5), 0.1));
  map.Insert(pts);
  ASSERT_EQ(map.size(), 1u);
  const Voxel* v = map.Find(Vec3(0.1, 0.1, 0.1));
  ASSERT_NE(v, nullptr);
  ASSERT_EQ(v->points.size(), 10u);
  EXPECT_EQ(v->points.front(), pts[15]);  // oldest points evicted first
  EXPECT_EQ(v->points.back(), pts[24]);
  EXPECT_NE(map.PlaneAt(Vec3(0.1, 0.1, 0.1)), nullptr);
  EXPECT_EQ(map.PlaneAt(Vec3(5, 5, 5)), nullptr);
  EXPECT_LB_ERROR(VoxelMap(0.0, 5), ErrorCode::kInvalidArgument);
}

TEST(SlidingWindow, StrideAndRadius) {
  VoxelMap voxels(0.5, 50);
  VisualMap visual;
  const std::vector<Vec3> pts = {Vec3(50, 0, 0), Vec3(150, 0, 0)};
  voxels.Insert(pts);
  for (const Vec3& p : pts) {
    VisualMapPoint m;
    m.position = p;
    visual.Add(m);
  }
  SlidingWindow win(100.0, 8.0);
  EXPECT_FALSE(win.Update(Vec3::Zero(), voxels, visual));
  EXPECT_FALSE(win.Update(Vec3(7.9, 0, 0), voxels, visual));
  EXPECT_NEAR(win.travel(), 7.9, 1e-12);
  EXPECT_EQ(visual.size(), 2u);
  EXPECT_TRUE(win.Update(Vec3(8.0, 0, 0), voxels, visual));
  EXPECT_EQ(win.travel(), 0.0);
  ASSERT_EQ(visual.size(), 1u);
  EXPECT_EQ(visual.points()[0]->position, pts[0]);
  EXPECT_EQ(visual.points()[0]->id, 0);
  EXPECT_EQ(voxels.size(), 1u);
  EXPECT_NE(voxels.Find(pts[0]), nullptr);
}

TEST(SlidingWindow, TravelIsPathLength) {
  VoxelMap voxels;
  VisualMap visual;
  SlidingWindow win(100.0, 8.0);
  // Back and forth 3 m: displacement stays small but travel accumulates.
  bool pruned = false;
  for (int i = 0; i < 4 && !pruned; ++i) {
    pruned = win.Update(Vec3(i % 2 == 0 ? 0.0 : 3.0, 0, 0), voxels, visual);
  }
  EXPECT_TRUE(pruned);  // 0 -> 3 -> 0 -> 3 is 9 m
}

struct RetrievalFixture {
  VisualMap map;
  CameraIntrinsics k = DefaultCamera();
  Pose T_w_c;  // identity: camera looks along world +z
};

void AddPoint(VisualMap& map, const Vec3& p, const Vec3& n, double score) {
  VisualMapPoint m;
  m.position = p;
  m.normal = n;
  m.patch_score = score;
  map.Add(m);
}

TEST(Retrieval, ArgmaxPerCellTiesToEarlier) {
  RetrievalFixture f;
  // (0.1, 0.1, 2) projects to (340, 260), cell (11, 8) with 30 px cells.
  AddPoint(f.map, Vec3(0.10, 0.10, 2), Vec3::UnitZ(), 5.0);
  AddPoint(f.map, Vec3(0.11, 0.11, 2), Vec3::UnitZ(), 7.0);
  AddPoint(f.map, Vec3(0.12, 0.10, 2), Vec3::UnitZ(), 7.0);
  AddPoint(f.map, Vec3(0.10, 0.10, -2), Vec3::UnitZ(), 100.0);  // behind the camera
  AddPoint(f.map, Vec3(0.105, 0.10, 2), Vec3::UnitX(), 100.0);  // 90 degree view angle
  const auto sel = RetrieveVisualSubmap(f.map, f.T_w_c, f.k, {});
  ASSERT_EQ(sel.entries.size(), 1u);
  EXPECT_EQ(sel.entries[0].point->id, 1);
  EXPECT_EQ(sel.entries[0].cell, 8 * sel.cols + 11);
  EXPECT_TRUE(sel.entries[0].uv.isApprox(Vec2(342, 262)));
  EXPECT_EQ(sel.cols, 22);
  EXPECT_EQ(sel.rows, 16);
}

TEST(Retrieval, ViewAngleBoundary) {
  RetrievalFixture f;
  const double a50 = 50 * std::numbers::pi / 180, a70 = 70 * std::numbers::pi / 180;
  AddPoint(f.map, Vec3(0, 0, 2), Vec3(std::sin(a50), 0, std::cos(a50)), 1.0);
  AddPoint(f.map, Vec3(1, 1, 2), Vec3(std::sin(a70), 0, -std::cos(a70)), 1.0);
  const auto sel = RetrieveVisualSubmap(f.map, f.T_w_c, f.k, {});
  ASSERT_EQ(sel.entries.size(), 1u);
  EXPECT_EQ(sel.entries[0].point->id, 0);
}

TEST(Retrieval, MatchesBruteForce) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    RetrievalFixture f;
    f.T_w_c = testing::RandomPose(rng, 1.0);
    for (int i = 0; i < 800; ++i) {
      const Vec3 pc(rng.Uniform(-3, 3), rng.Uniform(-2, 2), rng.Uniform(-1, 4));
      // Scores from a small set so ties happen.
      AddPoint(f.map, Transform(f.T_w_c, pc), testing::RandomVec(rng, 1.0).normalized(),
               double(rng.Below(4)));
    }
    RetrievalParams params;
    params.border = int(rng.Below(20));
    const auto sel = RetrieveVisualSubmap(f.map, f.T_w_c, f.k, params);

    // Oracle: scan all points per cell.
    const GridSpec grid = GridSpec::For(f.k, params.cell_size);
    std::vector<int> want(grid.cols * grid.rows, -1);
    const Vec3 cc = f.T_w_c.translation;
    for (const auto& p : f.map.points()) {
      const Vec3 pc = Transform(Inverse(f.T_w_c), p->position);
      if (pc.z() <= 1e-6) continue;
      const Vec2 uv(f.k.fx * pc.x() / pc.z() + f.k.cx, f.k.fy * pc.y() / pc.z() + f.k.cy);
      if (uv.x() < params.border || uv.y() < params.border ||
          uv.x() > f.k.width - 1 - params.border || uv.y() > f.k.height - 1 - params.border) {
        continue;
      }
      const Vec3 ray = (cc - p->position).normalized();
      if (std::abs(ray.dot(p->normal)) <= std::cos(60 * std::numbers::pi / 180)) continue;
      const int cell = int(uv.y() / 30) * grid.cols + int(uv.x() / 30);
      if (want[cell] < 0 || p->patch_score > f.map.points()[want[cell]]->patch_score) {
        want[cell] = int(p->id);
      }
    }
    std::vector<int> got(want.size(), -1);
    int prev_cell = -1;
    for (const auto& e : sel.entries) {
      EXPECT_GT(e.cell, prev_cell);  // one per cell, ordered
      prev_cell = e.cell;
      got[e.cell] = int(e.point->id);
    }
    EXPECT_EQ(got, want);
    const auto occ = sel.Occupancy();
    for (std::size_t c = 0; c < occ.size(); ++c) EXPECT_EQ(occ[c], want[c] >= 0);
  }
}

// Textured plane z = 2 in front of an identity camera, with its voxel map.
struct PlaneWorld {
  CameraIntrinsics k = DefaultCamera();
  Pose T_w_c;
  std::shared_ptr<const Pyramid> pyr;
  VoxelMap voxels{0.5, 50};
  std::vector<ProjectedPoint> scan;

  explicit PlaneWorld(bool textured) {
    const Texture tex(11, 0.5);
    GrayImage img(k.width, k.height, 128);
    if (textured) {
      for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
          // Pixel (x, y) sees world (2 (x - cx) / fx, 2 (y - cy) / fy, 2).
          img.at(x, y) = static_cast<std::uint8_t>(
              std::lround(tex(2 * (x - k.cx) / k.fx, 2 * (y - k.cy) / k.fy)));
        }
      }
    }
    pyr = std::make_shared<Pyramid>(BuildPyramid(img, 4, 2.0));
    std::vector<Vec3> pts;
    for (double y = -1.15; y < 1.2; y += 0.02)
      for (double x = -1.55; x < 1.6; x += 0.02) pts.push_back(Vec3(x, y, 2.0));
    voxels.Insert(pts);
    scan = ProjectScan(pts, T_w_c, k);
  }
};

TEST(GenerateDirect, ConstantImageYieldsNothing) {
  PlaneWorld w(false);
  EXPECT_TRUE(
      GenerateVisualMapPointsDirect(w.pyr, w.T_w_c, w.k, w.scan, w.voxels, {}, {}, 0).empty());
}

TEST(GenerateDirect, OnePerFreeCell) {
  PlaneWorld w(true);
  MapPointParams params;
  const GridSpec grid = GridSpec::For(w.k, params.cell_size);
  std::vector<bool> occupied(grid.cols * grid.rows, false);
  for (std::size_t c = 0; c < occupied.size(); c += 3) occupied[c] = true;
  const auto pts =
      GenerateVisualMapPointsDirect(w.pyr, w.T_w_c, w.k, w.scan, w.voxels, occupied, params, 4);
  ASSERT_GT(pts.size(), 50u);
  std::set<int> cells;
  for (const auto& p : pts) {
    const int cell = grid.CellOf(p.ref_uv);
    EXPECT_FALSE(occupied[cell]);
    EXPECT_TRUE(cells.insert(cell).second);
    EXPECT_GE(p.ref_uv.x(), params.border);
    EXPECT_LE(p.ref_uv.x(), w.k.width - 1 - params.border);
    EXPECT_EQ(p.ref_patches.size(), 4u);
    EXPECT_EQ(p.created_frame, 4);
    EXPECT_FALSE(p.descriptor.has_value());
    EXPECT_NEAR(p.normal.dot(Vec3(0, 0, -1)), 1.0, 1e-9);  // faces the camera
    const auto g = MeanPatchGradient(w.pyr->levels[0], p.ref_uv, params.patch_size);
    ASSERT_TRUE(g);
    EXPECT_GE(*g, params.grad_threshold);
    EXPECT_NEAR(p.patch_score, *g * ViewCosine(p.position, p.normal, Vec3::Zero()), 1e-9);
  }
  const std::vector<bool> all(occupied.size(), true);
  EXPECT_TRUE(
      GenerateVisualMapPointsDirect(w.pyr, w.T_w_c, w.k, w.scan, w.voxels, all, params, 4).empty());
}

TEST(Association, ThreeByThreeWindow) {
  const std::vector<ProjectedPoint> scan = {{Vec2(10.0, 10.0), Vec3(1, 0, 0)},
                                            {Vec2(11.0, 10.9), Vec3(2, 0, 0)},
                                            {Vec2(12.5, 10.0), Vec3(3, 0, 0)}};
  EXPECT_EQ(*AssociateLidar3x3(Vec2(10.2, 10.0), scan), Vec3(1, 0, 0));
  EXPECT_EQ(*AssociateLidar3x3(Vec2(11.0, 10.5), scan), Vec3(2, 0, 0));
  EXPECT_EQ(*AssociateLidar3x3(Vec2(11.6, 10.0), scan), Vec3(3, 0, 0));
  EXPECT_FALSE(AssociateLidar3x3(Vec2(14.0, 10.0), scan));
  EXPECT_FALSE(AssociateLidar3x3(Vec2(10.0, 12.0), scan));
}

TEST(Association, IndexMatchesLinearScan) {
  SplitMix64 rng(5);
  std::vector<ProjectedPoint> scan;
  for (int i = 0; i < 3000; ++i) {
    scan.push_back({Vec2(rng.Uniform(0, 199), rng.Uniform(0, 99)), Vec3(i, 0, 0)});
  }
  const ScanIndex index(scan, 200, 100);
  for (int q = 0; q < 2000; ++q) {
    const Vec2 kp(rng.Uniform(0, 199), rng.Uniform(0, 99));
    EXPECT_EQ(index.Associate(kp), AssociateLidar3x3(kp, scan));
  }
}

TEST(ReferencePatches, TenPercentHysteresis) {
  PlaneWorld w(true);
  VisualMap map;
  const Vec2 uv(320, 240);
  const Vec3 pw(0, 0, 2);
  VisualMapPoint p;
  p.position = pw;
  p.normal = Vec3(0, 0, -1);
  map.Add(p);
  VisualMapPoint& mp = *map.points()[0];
  const double score = *PatchScore(w.pyr->levels[0], uv, 8, mp, Vec3::Zero());
  ASSERT_GT(score, 0.0);

  const auto sel = RetrieveVisualSubmap(map, w.T_w_c, w.k, {});
  ASSERT_EQ(sel.entries.size(), 1u);
  mp.patch_score = score / 1.09;
  EXPECT_EQ(UpdateReferencePatches(sel, w.pyr, w.T_w_c, w.k, 8, 4), 0);
  EXPECT_EQ(mp.ref_pyramid, nullptr);
  mp.patch_score = score / 1.11;
  EXPECT_EQ(UpdateReferencePatches(sel, w.pyr, w.T_w_c, w.k, 8, 4), 1);
  EXPECT_EQ(mp.ref_pyramid, w.pyr);
  EXPECT_DOUBLE_EQ(mp.patch_score, score);
  EXPECT_TRUE(mp.ref_uv.isApprox(uv));
  EXPECT_EQ(mp.ref_patches.size(), 4u);
  // Score unchanged now, so a second pass does nothing.
  EXPECT_EQ(UpdateReferencePatches(sel, w.pyr, w.T_w_c, w.k, 8, 4), 0);
}

TEST(Patches, CropAndGradient) {
  GrayImage img(40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) img.at(x, y) = static_cast<std::uint8_t>(3 * x);
  const auto g = MeanPatchGradient(img, Vec2(20, 20), 8);
  ASSERT_TRUE(g);
  EXPECT_NEAR(*g, 3.0, 1e-9);
  EXPECT_FALSE(MeanPatchGradient(img, Vec2(3, 20), 8));
  const Pyramid pyr = BuildPyramid(img, 2, 2.0);
  EXPECT_TRUE(CropPatches(pyr, Vec2(20, 20), 8, 2));
  EXPECT_FALSE(CropPatches(pyr, Vec2(37, 20), 8, 2));
}

}  // namespace
}  // namespace livobench
