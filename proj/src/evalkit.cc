#include "livobench/evalkit.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "livobench/error.h"
#include "livobench/textio.h"

namespace livobench {

Trajectory ParseTum(const std::string& text, const std::string& name) {
  Trajectory out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') continue;
    const auto fail = [&](const std::string& what) {
      throw Error(ErrorCode::kFormatError,
                  name + " at byte " + std::to_string(start) + ": " + what);
    };
    const auto fields = SplitFields(line, ' ');
    if (fields.size() != 8) fail("expected 8 fields, got " + std::to_string(fields.size()));
    double v[8];
    for (int i = 0; i < 8; ++i) {
      const auto d = ParseDouble(fields[i]);
      if (!d || !std::isfinite(*d)) fail("not a number: '" + std::string(fields[i]) + "'");
      v[i] = *d;
    }
    if (!out.empty() && !(v[0] > out.back().t)) fail("timestamps not increasing");
    const double qn = std::sqrt(v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]);
    if (!(qn > 1e-9)) fail("zero quaternion");
    out.push_back({v[0], Pose{Rotation(v[7], v[4], v[5], v[6]), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

Trajectory ReadTum(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  }
  return ParseTum(ReadFile(path), path.string());
}

std::string FormatTum(const Trajectory& traj) {
  std::string out;
  for (const auto& s : traj) {
    const auto& p = s.pose.translation;
    const auto& q = s.pose.rotation;
    out += FormatDouble(s.t) + " " + FormatDouble(p.x()) + " " + FormatDouble(p.y()) + " " +
           FormatDouble(p.z()) + " " + FormatDouble(q.x()) + " " + FormatDouble(q.y()) + " " +
           FormatDouble(q.z()) + " " + FormatDouble(q.w()) + "\n";
  }
  return out;
}

Association Associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  if (est.empty() || gt.empty()) {
    throw Error(ErrorCode::kNoOverlap, "empty trajectory");
  }
  Association out;
  std::size_t j = 0;
  for (const auto& e : est) {
    while (j + 1 < gt.size() && gt[j + 1].t <= e.t) ++j;
    std::size_t best = j;
    if (j + 1 < gt.size() && std::abs(gt[j + 1].t - e.t) < std::abs(gt[j].t - e.t)) best = j + 1;
    if (std::abs(gt[best].t - e.t) <= max_dt) {
      out.pairs.push_back({e.t, e.pose, gt[best].pose});
    } else {
      ++out.dropped;
    }
  }
  if (out.pairs.empty()) {
    throw Error(ErrorCode::kNoOverlap, "no estimate lies within " + FormatDouble(max_dt) +
                                           " s of a ground-truth sample");
  }
  return out;
}

Pose AlignSe3(const std::vector<PosePair>& pairs) {
  if (pairs.size() < 3) {
    throw Error(ErrorCode::kDegenerateGeometry, "need at least 3 pairs for SE(3) alignment");
  }
  const double n = static_cast<double>(pairs.size());
  Vec3 ce = Vec3::Zero(), cg = Vec3::Zero();
  for (const auto& p : pairs) {
    ce += p.est.translation;
    cg += p.gt.translation;
  }
  ce /= n;
  cg /= n;
  Mat3 sigma = Mat3::Zero();
  Mat3 cov_e = Mat3::Zero();
  for (const auto& p : pairs) {
    const Vec3 de = p.est.translation - ce;
    sigma += (p.gt.translation - cg) * de.transpose();
    cov_e += de * de.transpose();
  }
  Eigen::JacobiSVD<Mat3> rank(cov_e);
  const Vec3 sv = rank.singularValues();
  if (!(sv[1] > 1e-12 * std::max(sv[0], 1e-300)) || sv[0] <= 0.0) {
    throw Error(ErrorCode::kDegenerateGeometry, "estimated positions are collinear");
  }
  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU(), V = svd.matrixV();
  Mat3 S = Mat3::Identity();
  if (U.determinant() * V.determinant() < 0.0) S(2, 2) = -1.0;
  const Mat3 R = U * S * V.transpose();
  return Pose{Rotation::FromMatrix(R), cg - R * ce};
}

Pose AlignOrigin(const std::vector<PosePair>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::kNoOverlap, "no pairs");
  return Pose{Rotation(), pairs.front().gt.translation - pairs.front().est.translation};
}

std::string_view AlignModeName(AlignMode m) { return m == AlignMode::kSe3 ? "se3" : "origin"; }

AlignMode ParseAlignMode(std::string_view s) {
  if (s == "se3") return AlignMode::kSe3;
  if (s == "origin") return AlignMode::kOrigin;
  throw Error(ErrorCode::kInvalidArgument, "alignment must be se3 or origin");
}

double WrapDegrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  if (w > 180.0) w -= 360.0;
  return w;
}

ApeReport ApeStats(const std::vector<PosePair>& pairs, const Pose& alignment, AlignMode mode) {
  ApeReport r;
  r.alignment = mode;
  r.n_pairs = static_cast<int>(pairs.size());
  double sum_sq = 0.0;
  for (const auto& p : pairs) {
    const Pose aligned = Compose(alignment, p.est);
    const Vec3 e = p.gt.translation - aligned.translation;
    r.t.push_back(p.t);
    r.error.push_back(e);
    const double yaw = (Yaw(p.gt.rotation) - Yaw(aligned.rotation)) * 180.0 / std::numbers::pi;
    r.yaw_deg.push_back(WrapDegrees(yaw));
    sum_sq += e.squaredNorm();
    r.max = std::max(r.max, e.norm());
  }
  r.rmse = pairs.empty() ? 0.0 : std::sqrt(sum_sq / static_cast<double>(pairs.size()));
  return r;
}

ApeReport Evaluate(const Trajectory& est, const Trajectory& gt, AlignMode mode, double max_dt) {
  const Association assoc = Associate(est, gt, max_dt);
  const Pose T = mode == AlignMode::kSe3 ? AlignSe3(assoc.pairs) : AlignOrigin(assoc.pairs);
  ApeReport r = ApeStats(assoc.pairs, T, mode);
  r.dropped = assoc.dropped;
  return r;
}

namespace {

StageStats Summarize(std::vector<double> v) {
  StageStats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  // Nearest-rank percentile.
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

}  // namespace

StageSummary ProfileStages(const std::vector<StageRecord>& records) {
  StageSummary summary;
  std::array<std::vector<double>, 5> per_stage;
  for (const auto& rec : records) {
    std::array<double, 5> row{};
    std::array<bool, 5> seen{};
    for (const auto& [key, value] : rec.times) {
      const auto it = std::find(kStageNames.begin(), kStageNames.end(), key);
      if (it == kStageNames.end()) {
        throw Error(ErrorCode::kMissingStage, "unknown stage key '" + key + "'");
      }
      const auto i = static_cast<std::size_t>(it - kStageNames.begin());
      row[i] = value;
      seen[i] = true;
    }
    for (std::size_t i = 0; i < 5; ++i) {
      if (!seen[i]) {
        throw Error(ErrorCode::kMissingStage, "frame at t=" + FormatDouble(rec.t) +
                                                  " lacks stage " + std::string(kStageNames[i]));
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      per_stage[i].push_back(row[i]);
      total += row[i];
    }
    summary.totals.push_back(total);
    summary.frames.push_back(row);
  }
  for (std::size_t i = 0; i < 5; ++i) summary.stages[i] = Summarize(per_stage[i]);
  summary.total = Summarize(summary.totals);
  return summary;
}

std::string ApeJson(const ApeReport& ape) {
  nlohmann::ordered_json j;
  j["rmse"] = ape.rmse;
  j["max"] = ape.max;
  j["alignment"] = std::string(AlignModeName(ape.alignment));
  j["n_pairs"] = ape.n_pairs;
  j["dropped"] = ape.dropped;
  return j.dump(2) + "\n";
}

std::string ErrorsCsv(const ApeReport& ape) {
  std::string out = "t,dx,dy,dz,yaw_deg\n";
  for (std::size_t i = 0; i < ape.t.size(); ++i) {
    out += FormatDouble(ape.t[i]) + "," + FormatDouble(ape.error[i].x()) + "," +
           FormatDouble(ape.error[i].y()) + "," + FormatDouble(ape.error[i].z()) + "," +
           FormatDouble(ape.yaw_deg[i]) + "\n";
  }
  return out;
}

std::string StabilityCsv(const std::vector<StabilityRecord>& stability) {
  std::string out = "t,sparse_map_size,feature_num,initial_matches,inlier_matches\n";
  for (const auto& s : stability) {
    out += FormatDouble(s.t) + "," + std::to_string(s.sparse_map_size) + "," +
           std::to_string(s.feature_num) + "," + std::to_string(s.initial_matches) + "," +
           std::to_string(s.inlier_matches) + "\n";
  }
  return out;
}

std::string StagesCsv(const std::vector<StageRecord>& stages) {
  const StageSummary summary = ProfileStages(stages);
  std::string out = "t";
  for (auto name : kStageNames) out += "," + std::string(name);
  out += ",total\n";
  for (std::size_t f = 0; f < stages.size(); ++f) {
    out += FormatDouble(stages[f].t);
    for (double v : summary.frames[f]) out += "," + FormatDouble(v);
    out += "," + FormatDouble(summary.totals[f]) + "\n";
  }
  return out;
}

std::string LinePlotSvg(const std::string& title, const std::vector<double>& x,
                        const std::vector<PlotSeries>& series) {
  constexpr double W = 800, H = 320, L = 60, R = 20, T = 30, B = 40;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool have = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (const auto& s : series) {
      if (i >= s.values.size() || !std::isfinite(s.values[i])) continue;
      if (!have) {
        xmin = xmax = x[i];
        ymin = ymax = s.values[i];
        have = true;
      }
      xmin = std::min(xmin, x[i]);
      xmax = std::max(xmax, x[i]);
      ymin = std::min(ymin, s.values[i]);
      ymax = std::max(ymax, s.values[i]);
    }
  }
  if (xmax - xmin <= 0) xmax = xmin + 1;
  if (ymax - ymin <= 0) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"320\">\n";
  out += "<rect width=\"800\" height=\"320\" fill=\"white\"/>\n";
  out += "<text x=\"" + FormatFixed(L, 0) + "\" y=\"20\" font-size=\"14\">" + title + "</text>\n";
  out += "<line x1=\"60\" y1=\"280\" x2=\"780\" y2=\"280\" stroke=\"black\"/>\n";
  out += "<line x1=\"60\" y1=\"30\" x2=\"60\" y2=\"280\" stroke=\"black\"/>\n";
  out += "<text x=\"60\" y=\"300\" font-size=\"11\">" + FormatFixed(xmin, 2) + "</text>\n";
  out += "<text x=\"740\" y=\"300\" font-size=\"11\">" + FormatFixed(xmax, 2) + "</text>\n";
  out += "<text x=\"2\" y=\"284\" font-size=\"11\">" + FormatFixed(ymin, 3) + "</text>\n";
  out += "<text x=\"2\" y=\"34\" font-size=\"11\">" + FormatFixed(ymax, 3) + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 5];
    std::string pts;
    for (std::size_t i = 0; i < x.size() && i < series[s].values.size(); ++i) {
      if (!std::isfinite(series[s].values[i])) continue;
      if (!pts.empty()) pts += " ";
      pts += FormatFixed(px(x[i]), 2) + "," + FormatFixed(py(series[s].values[i]), 2);
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + FormatFixed(W - R - 150, 0) + "\" y=\"" +
           FormatFixed(T + 14 * (s + 1), 0) + "\" font-size=\"11\" fill=\"" + color + "\">" +
           series[s].name + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void EmitReport(const std::filesystem::path& dir, const ApeReport& ape,
                const std::vector<StabilityRecord>& stability,
                const std::vector<StageRecord>& stages) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string());
  const std::string stages_csv = StagesCsv(stages);  // validates stage keys first
  AtomicWriteFile(dir / "ape.json", ApeJson(ape));
  AtomicWriteFile(dir / "errors.csv", ErrorsCsv(ape));
  AtomicWriteFile(dir / "stability.csv", StabilityCsv(stability));
  AtomicWriteFile(dir / "stages.csv", stages_csv);

  std::vector<double> dx, dy, dz;
  for (const Vec3& e : ape.error) {
    dx.push_back(e.x());
    dy.push_back(e.y());
    dz.push_back(e.z());
  }
  AtomicWriteFile(dir / "errors.svg",
                  LinePlotSvg("Translation error [m]", ape.t, {{"dx", dx}, {"dy", dy}, {"dz", dz}}));
  AtomicWriteFile(dir / "yaw.svg", LinePlotSvg("Yaw error [deg]", ape.t, {{"yaw", ape.yaw_deg}}));

  std::vector<double> ts, map_size, feats, initial, inliers;
  for (const auto& s : stability) {
    ts.push_back(s.t);
    map_size.push_back(double(s.sparse_map_size));
    feats.push_back(double(s.feature_num));
    initial.push_back(double(s.initial_matches));
    inliers.push_back(double(s.inlier_matches));
  }
  AtomicWriteFile(dir / "stability.svg",
                  LinePlotSvg("Tracking stability", ts,
                              {{"sparse_map_size", map_size}, {"feature_num", feats},
                               {"initial_matches", initial}, {"inlier_matches", inliers}}));

  const StageSummary summary = ProfileStages(stages);
  std::vector<double> st;
  std::vector<PlotSeries> stage_series;
  for (const auto& rec : stages) st.push_back(rec.t);
  for (std::size_t i = 0; i < 5; ++i) {
    PlotSeries s{std::string(kStageNames[i]), {}};
    for (const auto& f : summary.frames) s.values.push_back(f[i] * 1e3);
    stage_series.push_back(std::move(s));
  }
  AtomicWriteFile(dir / "stages.svg", LinePlotSvg("Stage time [ms]", st, stage_series));
}

}  // namespace livobench
