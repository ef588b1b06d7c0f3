#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "livobench/geometry.h"
#include "livobench/simworld.h"

namespace livobench {

using Trajectory = std::vector<StampedPose>;

/// TUM text: `t x y z qx qy qz qw`. Blank lines and '#' comments are
/// skipped. Throws kFormatError (file and byte offset) or kIoError.
Trajectory ReadTum(const std::filesystem::path& path);
Trajectory ParseTum(const std::string& text, const std::string& name);
std::string FormatTum(const Trajectory& traj);

struct PosePair {
  double t = 0.0;
  Pose est;
  Pose gt;
};

struct Association {
  std::vector<PosePair> pairs;
  int dropped = 0;
};

/// Pairs every estimate with the nearest-in-time ground truth within
/// max_dt (ties to the earlier sample). Throws kNoOverlap if nothing pairs.
Association Associate(const Trajectory& est, const Trajectory& gt, double max_dt = 0.01);

/// Rigid transform T minimizing sum |gt_i - T est_i|^2 over positions.
/// Throws kDegenerateGeometry for fewer than 3 or collinear positions.
Pose AlignSe3(const std::vector<PosePair>& pairs);

/// Pure translation taking the first estimate onto the first ground truth.
Pose AlignOrigin(const std::vector<PosePair>& pairs);

enum class AlignMode { kSe3, kOrigin };
std::string_view AlignModeName(AlignMode m);
AlignMode ParseAlignMode(std::string_view s);

struct ApeReport {
  double rmse = 0.0;
  double max = 0.0;
  AlignMode alignment = AlignMode::kSe3;
  int n_pairs = 0;
  int dropped = 0;
  std::vector<double> t;
  std::vector<Vec3> error;       // gt - aligned est
  std::vector<double> yaw_deg;   // yaw(gt) - yaw(aligned est), (-180, 180]
};

/// Wraps degrees into (-180, 180].
double WrapDegrees(double deg);

ApeReport ApeStats(const std::vector<PosePair>& pairs, const Pose& alignment, AlignMode mode);

/// Associate + align + stats in one call.
ApeReport Evaluate(const Trajectory& est, const Trajectory& gt, AlignMode mode,
                   double max_dt = 0.01);

struct StabilityRecord {
  double t = 0.0;
  long sparse_map_size = 0;
  long feature_num = 0;
  long initial_matches = 0;
  long inlier_matches = 0;
};

inline constexpr std::array<std::string_view, 5> kStageNames = {
    "retrieveFromVisualSparseMap", "computeJacobianAndUpdateEKF", "generateVisualMapPoints",
    "updateVisualMapPoints", "updateReferencePatch"};

struct StageRecord {
  double t = 0.0;
  std::vector<std::pair<std::string, double>> times;  // seconds
};

struct StageStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};

struct StageSummary {
  std::array<StageStats, 5> stages;
  StageStats total;
  std::vector<double> totals;  // per frame
  /// Per frame, the five stage times in kStageNames order.
  std::vector<std::array<double, 5>> frames;
};

/// Throws kMissingStage if a record lacks one of the five keys or carries
/// an unknown key.
StageSummary ProfileStages(const std::vector<StageRecord>& records);

/// Writes ape.json, errors.csv, stability.csv, stages.csv and SVG plots
/// into dir. Output is a pure function of the inputs.
void EmitReport(const std::filesystem::path& dir, const ApeReport& ape,
                const std::vector<StabilityRecord>& stability,
                const std::vector<StageRecord>& stages);

/// Individual writers, also used by `run` for its metrics directory.
std::string ApeJson(const ApeReport& ape);
std::string ErrorsCsv(const ApeReport& ape);
std::string StabilityCsv(const std::vector<StabilityRecord>& stability);
std::string StagesCsv(const std::vector<StageRecord>& stages);

struct PlotSeries {
  std::string name;
  std::vector<double> values;
};

/// Minimal deterministic SVG line chart.
std::string LinePlotSvg(const std::string& title, const std::vector<double>& x,
                        const std::vector<PlotSeries>& series);

}  // namespace livobench
