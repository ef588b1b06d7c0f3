#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "livobench/eskf.h"
#include "livobench/evalkit.h"
#include "livobench/features.h"
#include "livobench/simworld.h"
#include "livobench/vio.h"

namespace livobench {

enum class Frontend { kSparseDirect, kHybrid };
enum class ExtractorKind { kFastBrief, kExternal };

struct SparseDirectConfig {
  int levels = 4;
  int patch_size = 8;
  double outlier_threshold = 1000.0;
  double photometric_sigma = 10.0;
  double grad_threshold = 8.0;
};

struct MappingConfig {
  int grid_size = 30;
  double voxel_size = 0.5;
  int voxel_capacity = 50;
  double window_radius = 100.0;
  double window_stride = 8.0;
  bool sliding_window = true;
  double max_view_angle_deg = 60.0;
};

struct FilterConfig {
  ProcessNoise noise;
  int max_iters = 5;
  double eps = 1e-6;
  double lidar_sigma = 0.02;      // m
  int lidar_max_points = 500;
  double lidar_max_residual = 0.3;  // m, larger point-to-plane distances are skipped
};

struct PluginConfig {
  double timeout_s = 10.0;
  double min_confidence = 0.0;
};

/// Everything a run needs besides the dataset. Parsed from JSON; every
/// section and key is optional, unknown keys are rejected.
struct RunConfig {
  Frontend frontend = Frontend::kSparseDirect;
  ExtractorKind extractor = ExtractorKind::kFastBrief;
  std::string extractor_command;
  std::uint64_t seed = 0;
  SparseDirectConfig sparse_direct;
  DetectorParams detector;
  MatchParams matcher;
  RansacParams ransac;
  MappingConfig mapping;
  FilterConfig filter;
  PluginConfig plugin;
};

/// Throws kConfigError with the offending key path.
RunConfig ParseRunConfig(const std::string& json_text);
RunConfig LoadRunConfig(const std::filesystem::path& path);

std::string_view FrontendName(Frontend f);

struct FrameDiagnostics {
  double t = 0.0;
  long sparse_map_size = 0;
  long feature_num = 0;
  long initial_matches = 0;
  long inlier_matches = 0;
  int patches_considered = 0;
  int patches_used = 0;
  int patches_rejected_photometric = 0;
  UpdateStatus update_status = UpdateStatus::kSkipped;
  bool fallback = false;  // hybrid ran the full-selection sparse-direct update
  bool lidar_updated = false;
  int lidar_points = 0;
  StageRecord stages;

  double RejectionRate() const {
    return patches_considered > 0 ? double(patches_rejected_photometric) / patches_considered : 0.0;
  }
};

struct RunResult {
  Trajectory trajectory;  // body poses at frame timestamps
  std::vector<FrameDiagnostics> frames;
  Mat15 final_cov = Mat15::Zero();

  std::vector<StabilityRecord> Stability() const;
  std::vector<StageRecord> Stages() const;
};

/// Runs the estimator over an in-memory dataset. Throws kDatasetError for
/// an empty dataset and plugin errors for extractor failures.
RunResult Run(const Dataset& ds, const RunConfig& config);

/// Reads the dataset (kDatasetError on any read/validation failure) and runs.
RunResult RunDataset(const std::filesystem::path& dataset_dir, const RunConfig& config);

/// Per-frame diagnostics: t, status, fallback, counts.
std::string FramesCsv(const std::vector<FrameDiagnostics>& frames);

/// Writes the TUM trajectory (if traj_out is non-empty) and stability.csv,
/// stages.csv, frames.csv into metrics_dir (if non-empty).
void WriteRunOutputs(const RunResult& result, const std::filesystem::path& traj_out,
                     const std::filesystem::path& metrics_dir);

struct BenchEntry {
  std::string name;
  std::string config_json;
};

/// {"configs": [{"name": ..., "config": {...}}, ...]}. Entry configs are
/// kept as text and parsed per row, so one bad entry fails only its rows.
std::vector<BenchEntry> ParseBenchMatrix(const std::string& json_text);

struct BenchRow {
  std::string dataset;
  std::string config;
  bool ok = false;
  double rmse = 0.0;
  double max = 0.0;
  std::array<double, 5> stage_mean_ms{};
  double total_mean_ms = 0.0;
  std::string error;
};

/// Runs every (dataset, entry) pair, evaluates with SE(3) alignment,
/// writes per-row outputs under out_dir/<dataset>__<config>/ and
/// out_dir/table.csv.
std::vector<BenchRow> Bench(const std::vector<std::filesystem::path>& datasets,
                            const std::vector<BenchEntry>& matrix,
                            const std::filesystem::path& out_dir);

std::string BenchTableCsv(const std::vector<BenchRow>& rows);

}  // namespace livobench
