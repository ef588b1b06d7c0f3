#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "livobench/textio.h"
#include "test_util.h"

namespace livobench {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the binary with the given arguments; stderr goes to a side file.
Result Cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path err_file = fs::temp_directory_path() /
                            ("livobench_cli_err_" + std::to_string(::getpid()) + "_" +
                             std::to_string(counter++));
  const std::string cmd = env + " " + std::string(LIVOBENCH_CLI) + " " + args + " 2>" +
                          err_file.string();
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  fs::remove(err_file);
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::TempDir("cli");
    const Result r = Cli("gen --scenario baseline --seed 5 --duration 5 --out " + Dataset());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string Dataset() { return (dir_ / "ds").string(); }
  static std::string Path(const std::string& name) { return (dir_ / name).string(); }
  static std::string WriteJson(const std::string& name, const std::string& text) {
    AtomicWriteFile(Path(name), text);
    return Path(name);
  }
  static fs::path dir_;
};

fs::path CliTest::dir_;

TEST(Cli, HelpExitsZero) {
  const Result r = Cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen"), std::string::npos);
  EXPECT_NE(r.out.find("bench"), std::string::npos);
  EXPECT_EQ(Cli("eval --help").code, 0);
}

TEST(Cli, UnknownFlagIsError) {
  EXPECT_EQ(Cli("eval --est a --gt b --bogus").code, 2);
  EXPECT_EQ(Cli("").code, 2);
  EXPECT_EQ(Cli("eval --est a --gt b --align sim3").code, 2);
}

TEST(Cli, GenUnknownScenarioListsCatalog) {
  const fs::path tmp = testing::TempDir("cli_unknown");
  const Result r = Cli("gen --scenario loop --out " + (tmp / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("baseline"), std::string::npos);
  EXPECT_NE(r.err.find("illum-step"), std::string::npos);
  EXPECT_FALSE(fs::exists(tmp / "x"));
}

TEST(Cli, GenWriteFailure) {
  const fs::path tmp = testing::TempDir("cli_write");
  AtomicWriteFile(tmp / "file", "x");
  const Result r =
      Cli("gen --scenario baseline --duration 5 --out " + (tmp / "file" / "ds").string());
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, GenSummaryAndLayout) {
  EXPECT_TRUE(fs::exists(fs::path(Dataset()) / "gt.tum"));
  std::size_t lines = 0;
  std::ifstream in(fs::path(Dataset()) / "gt.tum");
  for (std::string l; std::getline(in, l);) lines += !l.empty() && l[0] != '#';
  EXPECT_GT(lines, 0u);
}

TEST_F(CliTest, RunWritesOneLinePerFrame) {
  const std::string cfg = WriteJson("sd.json", R"({"frontend": "sd"})");
  const std::string traj = Path("run_traj.tum");
  const Result r = Cli("run --dataset " + Dataset() + " --config " + cfg + " --traj-out " + traj +
                       " --metrics-out " + Path("run_metrics"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("frames=50"), std::string::npos) << r.out;
  std::size_t lines = 0;
  std::ifstream in(traj);
  for (std::string l; std::getline(in, l);) lines += !l.empty() && l[0] != '#';
  EXPECT_EQ(lines, 50u);

  // The estimate scores a small error against the ground truth.
  const Result e = Cli("eval --est " + traj + " --gt " + Dataset() + "/gt.tum");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out.rfind("rmse=", 0), 0u);
}

TEST_F(CliTest, RunErrors) {
  const std::string cfg = WriteJson("ok.json", "{}");
  EXPECT_EQ(Cli("run --dataset " + Dataset() + " --config " + Path("missing.json")).code, 2);
  EXPECT_EQ(Cli("run --dataset " + Dataset() + " --config " +
                WriteJson("typo.json", R"({"frontnd": "sd"})"))
                .code,
            2);
  EXPECT_EQ(Cli("run --dataset " + Path("nowhere") + " --config " + cfg).code, 4);
  const std::string plug = WriteJson(
      "plug.json", std::string(R"({"frontend": "hybrid", "extractor": {"kind": "external", )") +
                       R"("command": ")" + FIXTURE_PLUGIN + R"( nohello"}})");
  const Result r = Cli("run --dataset " + Dataset() + " --config " + plug);
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST_F(CliTest, EvalExitCodes) {
  const std::string gt = Dataset() + "/gt.tum";
  const Result same = Cli("eval --est " + gt + " --gt " + gt);
  ASSERT_EQ(same.code, 0) << same.err;
  EXPECT_EQ(same.out.rfind("rmse=0.000 max=0.000", 0), 0u) << same.out;

  // Shift every stamp far past the ground truth: no pair survives association.
  std::string shifted;
  std::ifstream in(gt);
  for (std::string l; std::getline(in, l);) {
    if (l.empty() || l[0] == '#') continue;
    const auto sp = l.find(' ');
    shifted += FormatDouble(*ParseDouble(l.substr(0, sp)) + 1000.0) + l.substr(sp) + "\n";
  }
  AtomicWriteFile(Path("far.tum"), shifted);
  EXPECT_EQ(Cli("eval --est " + Path("far.tum") + " --gt " + gt).code, 6);

  AtomicWriteFile(Path("bad.tum"), "0 1 2 3\n");
  EXPECT_EQ(Cli("eval --est " + Path("bad.tum") + " --gt " + gt).code, 4);
  EXPECT_EQ(Cli("eval --est " + Path("none.tum") + " --gt " + gt).code, 4);
}

TEST_F(CliTest, EvalSe3NotWorseThanOriginOnDrift) {
  // Linear drift along x plus a constant yaw offset.
  std::string est, gt;
  for (int i = 0; i < 100; ++i) {
    const double t = 0.1 * i;
    const double x = std::cos(t), y = std::sin(t);
    gt += FormatDouble(t) + " " + FormatDouble(x) + " " + FormatDouble(y) + " 0 0 0 0 1\n";
    est += FormatDouble(t) + " " + FormatDouble(x + 0.01 * i) + " " + FormatDouble(y + 0.2) +
           " 0.05 0 0 0 1\n";
  }
  AtomicWriteFile(Path("drift_est.tum"), est);
  AtomicWriteFile(Path("drift_gt.tum"), gt);
  const auto rmse = [](const std::string& out) {
    return ParseDouble(out.substr(5, out.find(" ") - 5)).value_or(-1.0);
  };
  const Result se3 = Cli("eval --est " + Path("drift_est.tum") + " --gt " + Path("drift_gt.tum") +
                         " --align se3 --report " + Path("drift_report"));
  const Result origin = Cli("eval --est " + Path("drift_est.tum") + " --gt " +
                            Path("drift_gt.tum") + " --align origin");
  ASSERT_EQ(se3.code, 0) << se3.err;
  ASSERT_EQ(origin.code, 0) << origin.err;
  EXPECT_LE(rmse(se3.out), rmse(origin.out));
  EXPECT_GT(rmse(origin.out), 0.0);
  EXPECT_TRUE(fs::exists(Path("drift_report")));
}

TEST_F(CliTest, BenchIsolatesFailedRowAndIsStable) {
  const std::string matrix = WriteJson("matrix.json", R"({"configs": [
    {"name": "sd", "config": {"frontend": "sd"}},
    {"name": "bad", "config": {"frontend": "orb"}}]})");
  const Result r = Cli("bench --dataset " + Dataset() + " --matrix " + matrix + " --out " +
                       Path("bench1"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string table = ReadFile(Path("bench1") + "/table.csv");
  std::size_t rows = 0;
  for (char c : table) rows += c == '\n';
  EXPECT_EQ(rows, 3u) << table;  // header plus one row per config
  EXPECT_NE(table.find("frontend: must be"), std::string::npos);
  EXPECT_NE(r.err.find("bad failed"), std::string::npos);

  const Result again = Cli("bench --dataset " + Dataset() + " --matrix " + matrix + " --out " +
                           Path("bench2"));
  ASSERT_EQ(again.code, 0);
  const std::string table2 = ReadFile(Path("bench2") + "/table.csv");
  // Stage columns hold wall-clock means; everything else must match byte for byte.
  std::istringstream a(table), b(table2);
  std::string la, lb;
  std::vector<bool> timing;
  while (std::getline(a, la)) {
    ASSERT_TRUE(std::getline(b, lb));
    const auto fa = SplitFields(la, ','), fb = SplitFields(lb, ',');
    ASSERT_EQ(fa.size(), fb.size()) << la << "\n" << lb;
    if (timing.empty()) {
      EXPECT_EQ(la, lb);
      for (auto f : fa) timing.push_back(f.size() > 3 && f.substr(f.size() - 3) == "_ms");
      continue;
    }
    for (std::size_t i = 0; i < fa.size(); ++i) {
      if (i < timing.size() && timing[i] && !fa[i].empty()) {
        EXPECT_GE(ParseDouble(fb[i]).value_or(-1.0), 0.0);
      } else {
        EXPECT_EQ(fa[i], fb[i]) << "column " << i;
      }
    }
  }
  EXPECT_FALSE(std::getline(b, lb));
}

}  // namespace
}  // namespace livobench
