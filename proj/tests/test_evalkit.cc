#include "livobench/evalkit.h"

#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>

#include "livobench/textio.h"
#include "test_util.h"

namespace livobench {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Trajectory Wiggle(SplitMix64& rng, int n, double dt = 0.1) {
  Trajectory tr;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    tr.push_back({t, Pose{So3Exp(Vec3(0.1 * std::sin(t), 0.05 * t, 0.3 * t)),
                          Vec3(std::cos(t), std::sin(1.3 * t), 0.2 * t) + testing::RandomVec(rng, 0.01)}});
  }
  return tr;
}

std::vector<PosePair> PairsOf(const Trajectory& est, const Trajectory& gt) {
  std::vector<PosePair> out;
  for (std::size_t i = 0; i < est.size(); ++i) out.push_back({est[i].t, est[i].pose, gt[i].pose});
  return out;
}

Trajectory Transformed(const Pose& T, const Trajectory& tr) {
  Trajectory out = tr;
  for (auto& s : out) s.pose = Compose(T, s.pose);
  return out;
}

double SumSq(const std::vector<PosePair>& pairs, const Pose& T) {
  double s = 0.0;
  for (const auto& p : pairs) s += (p.gt.translation - Transform(T, p.est.translation)).squaredNorm();
  return s;
}

TEST(Tum, RoundTripAndErrors) {
  SplitMix64 rng(1);
  const Trajectory tr = Wiggle(rng, 20);
  const Trajectory back = ParseTum("# header\n\n" + FormatTum(tr), "x.txt");
  ASSERT_EQ(back.size(), tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_EQ(back[i].t, tr[i].t);
    EXPECT_EQ(back[i].pose.translation, tr[i].pose.translation);
    EXPECT_LT(testing::PoseDistance(back[i].pose, tr[i].pose), 1e-15);
  }
  try {
    ParseTum("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n", "traj.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatError);
    EXPECT_NE(std::string(e.what()).find("traj.txt at byte 16"), std::string::npos) << e.what();
  }
  EXPECT_LB_ERROR(ParseTum("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n", "a"), ErrorCode::kFormatError);
  EXPECT_LB_ERROR(ParseTum("1 0 0 0 0 0 0 0\n", "a"), ErrorCode::kFormatError);
  EXPECT_LB_ERROR(ParseTum("1 0 0 nan 0 0 0 1\n", "a"), ErrorCode::kFormatError);
  EXPECT_LB_ERROR(ReadTum("/nonexistent/traj.txt"), ErrorCode::kIoError);
}

TEST(Associate, IdenticalGrids) {
  SplitMix64 rng(2);
  const Trajectory tr = Wiggle(rng, 30);
  const Association a = Associate(tr, tr);
  EXPECT_EQ(a.pairs.size(), 30u);
  EXPECT_EQ(a.dropped, 0);
}

TEST(Associate, OffsetBeyondToleranceIsNoOverlap) {
  SplitMix64 rng(3);
  const Trajectory gt = Wiggle(rng, 30);
  Trajectory est = gt;
  for (auto& s : est) s.t += 0.02;
  EXPECT_LB_ERROR(Associate(est, gt, 0.01), ErrorCode::kNoOverlap);
  EXPECT_LB_ERROR(Associate({}, gt), ErrorCode::kNoOverlap);
}

TEST(Associate, JitterEqualsBruteForce) {
  SplitMix64 rng(4);
  Trajectory gt, est;
  for (int i = 0; i < 200; ++i) gt.push_back({i * 0.01 + rng.Uniform(-0.003, 0.003), Pose{}});
  for (int i = 0; i < 300; ++i) {
    est.push_back({-0.2 + i * 0.0083 + rng.Uniform(-0.003, 0.003),
                   Pose{Rotation(), Vec3(i, 0, 0)}});
  }
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i].pose.translation = Vec3(0, double(i), 0);
  const Association a = Associate(est, gt, 0.004);
  std::vector<std::pair<double, double>> want;
  int dropped = 0;
  for (const auto& e : est) {
    int best = 0;
    for (int j = 1; j < int(gt.size()); ++j) {
      if (std::abs(gt[j].t - e.t) < std::abs(gt[best].t - e.t)) best = j;
    }
    if (std::abs(gt[best].t - e.t) <= 0.004) {
      want.emplace_back(e.pose.translation.x(), gt[best].pose.translation.y());
    } else {
      ++dropped;
    }
  }
  ASSERT_EQ(a.pairs.size(), want.size());
  EXPECT_EQ(a.dropped, dropped);
  EXPECT_GT(dropped, 0);
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(a.pairs[i].est.translation.x(), want[i].first);
    EXPECT_EQ(a.pairs[i].gt.translation.y(), want[i].second);
  }
}

TEST(AlignSe3, IdentityAndInjectedTransform) {
  SplitMix64 rng(5);
  const Trajectory gt = Wiggle(rng, 50);
  const Pose I = AlignSe3(PairsOf(gt, gt));
  EXPECT_LT(I.translation.norm(), 1e-12);
  EXPECT_LT(AngleBetween(I.rotation, Rotation()), 1e-12);

  const Pose T0{So3Exp(Vec3(0, 0, 90 * kDeg)), Vec3(1, 2, 3)};
  const auto pairs = PairsOf(Transformed(T0, gt), gt);
  const Pose T = AlignSe3(pairs);
  EXPECT_LT(testing::PoseDistance(T, Inverse(T0)), 1e-9);
  EXPECT_LT(ApeStats(pairs, T, AlignMode::kSe3).rmse, 1e-9);
}

TEST(AlignSe3, Degenerate) {
  Trajectory line;
  for (int i = 0; i < 10; ++i) line.push_back({i * 0.1, Pose{Rotation(), Vec3(i, 2 * i, 0)}});
  EXPECT_LB_ERROR(AlignSe3(PairsOf(line, line)), ErrorCode::kDegenerateGeometry);
  line.resize(2);
  EXPECT_LB_ERROR(AlignSe3(PairsOf(line, line)), ErrorCode::kDegenerateGeometry);
}

TEST(AlignSe3, InvariantToRigidTransformOfEstimate) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Trajectory gt = Wiggle(rng, 40);
    const Trajectory est = Wiggle(rng, 40);  // independent noise
    const auto base = PairsOf(est, gt);
    const double r0 = ApeStats(base, AlignSe3(base), AlignMode::kSe3).rmse;
    const auto moved = PairsOf(Transformed(testing::RandomPose(rng, 10.0), est), gt);
    const double r1 = ApeStats(moved, AlignSe3(moved), AlignMode::kSe3).rmse;
    EXPECT_NEAR(r0, r1, 1e-9);
  }
}

TEST(AlignSe3, LocalOptimality) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Trajectory gt = Wiggle(rng, 40);
    const auto pairs = PairsOf(Transformed(testing::RandomPose(rng, 3.0), Wiggle(rng, 40)), gt);
    const Pose T = AlignSe3(pairs);
    const double best = SumSq(pairs, T);
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {-1.0, 1.0}) {
        Vec3 w = Vec3::Zero();
        w[axis] = sign * 0.1 * kDeg;
        const Pose P{So3Exp(w) * T.rotation, T.translation};
        EXPECT_GE(SumSq(pairs, P), best);
      }
    }
  }
}

TEST(AlignOrigin, Examples) {
  SplitMix64 rng(8);
  const Trajectory gt = Wiggle(rng, 20);
  EXPECT_EQ(AlignOrigin(PairsOf(gt, gt)).translation, Vec3::Zero());
  Trajectory shifted = gt;
  for (auto& s : shifted) s.pose.translation += Vec3(5, 0, 0);
  const auto sp = PairsOf(shifted, gt);
  const Pose T = AlignOrigin(sp);
  EXPECT_TRUE(T.translation.isApprox(Vec3(-5, 0, 0), 1e-15));
  EXPECT_EQ(AngleBetween(T.rotation, Rotation()), 0.0);
  EXPECT_LT(ApeStats(sp, T, AlignMode::kOrigin).max, 1e-12);
}

TEST(AlignOrigin, ClosedFormDrift) {
  // est = gt + t (0.01, 0, 0) on a 10 Hz grid over 0..10 s; gt at the origin
  // so every coordinate is exact in binary.
  Trajectory gt, est;
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 10.0;
    gt.push_back({t, Pose{}});
    est.push_back({t, Pose{Rotation(), Vec3(0.01 * t, 0, 0)}});
  }
  const ApeReport r = Evaluate(est, gt, AlignMode::kOrigin);
  ASSERT_EQ(r.n_pairs, 101);
  for (int i = 0; i <= 100; ++i) {
    // e = gt - est, so the drift shows as -0.01 t.
    EXPECT_EQ(r.error[i].x(), -(0.01 * (i / 10.0))) << i;
    EXPECT_EQ(r.error[i].y(), 0.0);
  }
}

TEST(ApeStats, ClosedForms) {
  Trajectory gt, est;
  for (int i = 0; i < 10; ++i) {
    gt.push_back({i * 0.1, Pose{Rotation(), Vec3(i, 0, 1)}});
    est.push_back({i * 0.1, Pose{Rotation(), Vec3(i + (i % 2 ? 0.1 : -0.1), 0, 1)}});
  }
  const ApeReport zero = ApeStats(PairsOf(gt, gt), Pose{}, AlignMode::kOrigin);
  EXPECT_EQ(zero.rmse, 0.0);
  EXPECT_EQ(zero.max, 0.0);
  const ApeReport r = ApeStats(PairsOf(est, gt), Pose{}, AlignMode::kOrigin);
  EXPECT_NEAR(r.rmse, 0.1, 1e-12);
  EXPECT_NEAR(r.max, 0.1, 1e-12);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(r.error[i].x(), i % 2 ? -0.1 : 0.1, 1e-12);
}

TEST(ApeStats, MatchesNaiveLoop) {
  SplitMix64 rng(9);
  const Trajectory gt = Wiggle(rng, 80), est = Wiggle(rng, 80);
  const auto pairs = PairsOf(est, gt);
  const Pose T = testing::RandomPose(rng, 1.0);
  const ApeReport r = ApeStats(pairs, T, AlignMode::kSe3);
  double s = 0.0, mx = 0.0;
  for (const auto& p : pairs) {
    const Vec3 q = T.rotation.matrix() * p.est.translation + T.translation;
    const double dx = p.gt.translation.x() - q.x(), dy = p.gt.translation.y() - q.y(),
                 dz = p.gt.translation.z() - q.z();
    const double n2 = dx * dx + dy * dy + dz * dz;
    s += n2;
    mx = std::max(mx, std::sqrt(n2));
  }
  EXPECT_NEAR(r.rmse, std::sqrt(s / pairs.size()), 1e-12);
  EXPECT_NEAR(r.max, mx, 1e-12);
  EXPECT_LE(r.rmse, r.max);
}

TEST(ApeStats, YawWraps) {
  const Trajectory gt = {{0.0, Pose{So3Exp(Vec3(0, 0, 179 * kDeg)), Vec3::Zero()}}};
  const Trajectory est = {{0.0, Pose{So3Exp(Vec3(0, 0, -179 * kDeg)), Vec3::Zero()}}};
  const ApeReport r = ApeStats(PairsOf(est, gt), Pose{}, AlignMode::kOrigin);
  EXPECT_NEAR(r.yaw_deg[0], -2.0, 1e-9);
  EXPECT_EQ(WrapDegrees(180.0), 180.0);
  EXPECT_EQ(WrapDegrees(-180.0), 180.0);
  EXPECT_EQ(WrapDegrees(540.0), 180.0);
  EXPECT_NEAR(WrapDegrees(358.0), -2.0, 1e-12);
}

StageRecord Stage(double t, std::array<double, 5> v) {
  StageRecord r;
  r.t = t;
  for (int i = 0; i < 5; ++i) r.times.emplace_back(std::string(kStageNames[i]), v[i]);
  return r;
}

TEST(Stages, ConstantTimes) {
  std::vector<StageRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(Stage(i, {1e-3, 2e-3, 3e-3, 4e-3, 5e-3}));
  const StageSummary s = ProfileStages(recs);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(s.stages[i].mean, (i + 1) * 1e-3, 1e-15);
    EXPECT_NEAR(s.stages[i].median, (i + 1) * 1e-3, 1e-15);
    EXPECT_NEAR(s.stages[i].p95, (i + 1) * 1e-3, 1e-15);
  }
  EXPECT_NEAR(s.total.mean, 15e-3, 1e-15);
}

TEST(Stages, MissingOrMisspelled) {
  StageRecord bad = Stage(0, {1, 2, 3, 4, 5});
  bad.times[2].first = "generateVisualMapPoint";
  EXPECT_LB_ERROR(ProfileStages({bad}), ErrorCode::kMissingStage);
  StageRecord missing = Stage(0, {1, 2, 3, 4, 5});
  missing.times.pop_back();
  EXPECT_LB_ERROR(ProfileStages({missing}), ErrorCode::kMissingStage);
}

TEST(Stages, LinearityAndPercentiles) {
  SplitMix64 rng(10);
  std::vector<StageRecord> recs;
  for (int i = 0; i < 137; ++i) {
    recs.push_back(Stage(i, {rng.Uniform(), rng.Uniform(), rng.Uniform(), rng.Uniform(), rng.Uniform()}));
  }
  const StageSummary s = ProfileStages(recs);
  double sum_means = 0.0;
  for (const auto& st : s.stages) sum_means += st.mean;
  EXPECT_NEAR(sum_means, s.total.mean, 1e-9);
  std::vector<double> v = s.totals;
  std::sort(v.begin(), v.end());
  EXPECT_EQ(s.total.median, v[68]);
  EXPECT_EQ(s.total.p95, v[130]);  // nearest rank: ceil(0.95 * 137) = 131
}

TEST(Report, FilesRoundTripAndByteStable) {
  SplitMix64 rng(11);
  const Trajectory gt = Wiggle(rng, 60), est = Wiggle(rng, 60);
  const ApeReport ape = Evaluate(est, gt, AlignMode::kSe3);
  std::vector<StabilityRecord> stab;
  std::vector<StageRecord> stages;
  for (int i = 0; i < 60; ++i) {
    stab.push_back({i * 0.1, 10L * i, 300, 40, 30});
    stages.push_back(Stage(i * 0.1, {rng.Uniform(), rng.Uniform(), rng.Uniform(), rng.Uniform(), rng.Uniform()}));
  }
  const auto a = testing::TempDir("report_a"), b = testing::TempDir("report_b");
  EmitReport(a, ape, stab, stages);
  EmitReport(b, ape, stab, stages);
  for (const char* f : {"ape.json", "errors.csv", "stability.csv", "stages.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(a / f)) << f;
    EXPECT_EQ(ReadFile(a / f), ReadFile(b / f)) << f;
  }
  int svgs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    if (entry.path().extension() == ".svg") {
      ++svgs;
      EXPECT_EQ(ReadFile(entry.path()), ReadFile(b / entry.path().filename()));
    }
  }
  EXPECT_GE(svgs, 3);

  const std::string stages_csv = ReadFile(a / "stages.csv");
  EXPECT_EQ(stages_csv.substr(0, stages_csv.find('\n')),
            "t,retrieveFromVisualSparseMap,computeJacobianAndUpdateEKF,generateVisualMapPoints,"
            "updateVisualMapPoints,updateReferencePatch,total");

  // Recompute RMSE from errors.csv.
  const std::string csv = ReadFile(a / "errors.csv");
  std::size_t pos = csv.find('\n') + 1;
  EXPECT_EQ(csv.substr(0, pos), "t,dx,dy,dz,yaw_deg\n");
  double s = 0.0;
  int n = 0;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    const auto f = SplitFields(std::string_view(csv).substr(pos, end - pos), ',');
    ASSERT_EQ(f.size(), 5u);
    for (int i = 1; i <= 3; ++i) s += std::pow(*ParseDouble(f[i]), 2);
    ++n;
    pos = end + 1;
  }
  const auto j = nlohmann::json::parse(ReadFile(a / "ape.json"));
  EXPECT_EQ(n, j["n_pairs"].get<int>());
  EXPECT_NEAR(std::sqrt(s / n), j["rmse"].get<double>(), 1e-9);
  EXPECT_EQ(j["alignment"], "se3");
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Report, EmptyStabilityIsHeaderOnly) {
  EXPECT_EQ(StabilityCsv({}), "t,sparse_map_size,feature_num,initial_matches,inlier_matches\n");
}

}  // namespace
}  // namespace livobench
