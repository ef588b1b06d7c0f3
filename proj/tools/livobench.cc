// livobench: gen | run | eval | bench

#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "livobench/error.h"
#include "livobench/evalkit.h"
#include "livobench/pipeline.h"
#include "livobench/simworld.h"
#include "livobench/textio.h"

namespace lb = livobench;

namespace {

constexpr int kExitBadFlags = 2;
constexpr int kExitWriteFailure = 3;
constexpr int kExitDataset = 4;
constexpr int kExitPlugin = 5;
constexpr int kExitNoOverlap = 6;

std::string Catalog() {
  std::string s;
  for (const auto& n : lb::ScenarioNames()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

int Gen(const std::string& scenario, std::uint64_t seed, double duration, const std::string& out,
        bool noise_free, double step_gain, int threads) {
  lb::ScenarioOptions opts;
  opts.seed = seed;
  opts.duration = duration;
  opts.noise_free = noise_free;
  opts.illum_step_gain = step_gain;
  lb::Scenario sc = [&] {
    try {
      return lb::MakeScenario(scenario, opts);
    } catch (const lb::Error& e) {
      if (e.code() == lb::ErrorCode::kUnknownKind) {
        std::cerr << "error: unknown scenario '" << scenario << "'; available: " << Catalog()
                  << "\n";
      } else {
        std::cerr << "error: " << e.what() << "\n";
      }
      throw;
    }
  }();
  const lb::Dataset ds = lb::GenerateDataset(sc, seed, threads);
  try {
    lb::WriteDataset(out, ds);
  } catch (const std::exception& e) {
    std::cerr << "error: writing dataset: " << e.what() << "\n";
    return kExitWriteFailure;
  }
  std::cout << "scenario=" << scenario << " frames=" << ds.images.size()
            << " imu_samples=" << ds.imu.size() << " scans=" << ds.scans.size() << " out=" << out
            << "\n";
  return 0;
}

int Run(const std::string& dataset, const std::string& config, const std::string& traj_out,
        const std::string& metrics_out) {
  lb::RunConfig cfg;
  try {
    cfg = lb::LoadRunConfig(config);
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadFlags;
  }
  try {
    const lb::RunResult result = lb::RunDataset(dataset, cfg);
    lb::WriteRunOutputs(result, traj_out, metrics_out);
    int ok = 0;
    for (const auto& f : result.frames) ok += f.update_status == lb::UpdateStatus::kOk;
    std::cout << "frames=" << result.frames.size() << " visual_ok=" << ok
              << " frontend=" << lb::FrontendName(cfg.frontend) << "\n";
    return 0;
  } catch (const lb::Error& e) {
    std::cerr << "error: " << lb::ErrorCodeName(e.code()) << ": " << e.what() << "\n";
    if (e.IsPluginError()) return kExitPlugin;
    if (e.code() == lb::ErrorCode::kIoError) return kExitWriteFailure;
    return kExitDataset;
  }
}

int Eval(const std::string& est_path, const std::string& gt_path, const std::string& align,
         const std::string& report) {
  lb::Trajectory est, gt;
  try {
    est = lb::ReadTum(est_path);
    gt = lb::ReadTum(gt_path);
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataset;
  }
  try {
    const lb::ApeReport ape = lb::Evaluate(est, gt, lb::ParseAlignMode(align));
    if (!report.empty()) lb::EmitReport(report, ape, {}, {});
    std::cout << "rmse=" << lb::FormatFixed(ape.rmse, 3) << " max=" << lb::FormatFixed(ape.max, 3)
              << " n_pairs=" << ape.n_pairs << " dropped=" << ape.dropped
              << " alignment=" << align << "\n";
    return 0;
  } catch (const lb::Error& e) {
    std::cerr << "error: " << lb::ErrorCodeName(e.code()) << ": " << e.what() << "\n";
    if (e.code() == lb::ErrorCode::kNoOverlap) return kExitNoOverlap;
    if (e.code() == lb::ErrorCode::kIoError) return kExitWriteFailure;
    return 1;
  }
}

int Bench(const std::vector<std::string>& datasets, const std::string& matrix_path,
          const std::string& out) {
  std::vector<lb::BenchEntry> matrix;
  try {
    matrix = lb::ParseBenchMatrix(lb::ReadFile(matrix_path));
  } catch (const std::exception& e) {
    std::cerr << "error: matrix: " << e.what() << "\n";
    return kExitBadFlags;
  }
  std::vector<std::filesystem::path> dirs(datasets.begin(), datasets.end());
  std::vector<lb::BenchRow> rows;
  try {
    rows = lb::Bench(dirs, matrix, out);
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitWriteFailure;
  }
  for (const auto& r : rows) {
    if (r.ok) {
      std::cout << r.dataset << " " << r.config << " rmse=" << lb::FormatFixed(r.rmse, 3)
                << " max=" << lb::FormatFixed(r.max, 3) << "\n";
    } else {
      std::cerr << "warning: " << r.dataset << " " << r.config << " failed: " << r.error << "\n";
    }
  }
  std::cout << "table=" << (std::filesystem::path(out) / "table.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale LiDAR-inertial-visual odometry benchmark"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Render a synthetic dataset");
  std::string scenario, gen_out;
  std::uint64_t seed = 0;
  double duration = 30.0, step_gain = 1.6;
  bool noise_free = false;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  gen->add_option("--scenario", scenario, "Scenario name")->required();
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--duration", duration, "Duration in seconds");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_flag("--noise-free", noise_free, "Zero IMU noise and biases");
  gen->add_option("--illum-step-gain", step_gain, "Gain after the illumination step");
  gen->add_option("--threads", threads, "Render threads")->check(CLI::PositiveNumber);

  auto* run = app.add_subcommand("run", "Run the estimator on a dataset");
  std::string run_dataset, run_config, traj_out, metrics_out;
  run->add_option("--dataset", run_dataset, "Dataset directory")->required();
  run->add_option("--config", run_config, "Run config JSON")->required();
  run->add_option("--traj-out", traj_out, "TUM trajectory output");
  run->add_option("--metrics-out", metrics_out, "Diagnostics directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a trajectory against ground truth");
  std::string est, gt, align = "se3", report;
  eval->add_option("--est", est, "Estimated TUM trajectory")->required();
  eval->add_option("--gt", gt, "Ground-truth TUM trajectory")->required();
  eval->add_option("--align", align, "se3 or origin")->check(CLI::IsMember({"se3", "origin"}));
  eval->add_option("--report", report, "Report directory");

  auto* bench = app.add_subcommand("bench", "Run a config matrix over datasets");
  std::vector<std::string> bench_datasets;
  std::string matrix, bench_out;
  bench->add_option("--dataset", bench_datasets, "Dataset directories")->required();
  bench->add_option("--matrix", matrix, "Matrix JSON")->required();
  bench->add_option("--out", bench_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadFlags;
  }

  try {
    if (*gen) {
      if (!(duration > 0)) {
        std::cerr << "error: --duration must be positive\n";
        return kExitBadFlags;
      }
      try {
        return Gen(scenario, seed, duration, gen_out, noise_free, step_gain, threads);
      } catch (const lb::Error& e) {
        if (e.code() == lb::ErrorCode::kUnknownKind || e.code() == lb::ErrorCode::kInvalidArgument) {
          return kExitBadFlags;
        }
        throw;
      }
    }
    if (*run) return Run(run_dataset, run_config, traj_out, metrics_out);
    if (*eval) return Eval(est, gt, align, report);
    if (*bench) return Bench(bench_datasets, matrix, bench_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
