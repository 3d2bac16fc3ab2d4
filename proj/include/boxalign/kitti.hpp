#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "boxalign/io_util.hpp"
#include "boxalign/losses.hpp"
#include "boxalign/rng.hpp"

namespace boxalign {

/// One object row of a KITTI label file. Location is the devkit's
/// bottom-face anchor, not the cuboid center. DontCare rows carry sentinel
/// (negative) dimensions and -1 truncation/occlusion.
struct LabelRecord {
  std::string category;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  Rect2D rect;
  double h = 0.0, w = 0.0, l = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;  // bottom-center anchor, camera frame
  double ry = 0.0;
  std::optional<double> score;
};

inline bool is_dont_care(const LabelRecord& rec) {
  return rec.category == "DontCare" || rec.h <= 0.0 || rec.w <= 0.0 || rec.l <= 0.0;
}

namespace detail {

inline double parse_field(std::string_view token, std::size_t line,
                          const char* what) {
  const auto v = try_parse_double(token);
  if (!v.has_value()) {
    throw ParseError(std::string("label: unparsable ") + what + " '" +
                         std::string(token) + "'", line);
  }
  return *v;
}

}  // namespace detail

/// Parses a whitespace-separated label file: 15 fields per line, 16 with the
/// optional score. Unknown categories are preserved verbatim.
inline std::vector<LabelRecord> parse_label_file(std::string_view text) {
  std::vector<LabelRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto tokens = split_whitespace(lines[i]);
    if (tokens.empty()) continue;
    if (tokens.size() != 15 && tokens.size() != 16) {
      throw ParseError("label: expected 15 or 16 fields, got " +
                           std::to_string(tokens.size()), line_no);
    }
    LabelRecord rec;
    rec.category = std::string(tokens[0]);
    rec.truncation = detail::parse_field(tokens[1], line_no, "truncation");
    const double occ = detail::parse_field(tokens[2], line_no, "occlusion");
    if (std::abs(occ - std::round(occ)) > 1e-9) {
      throw ParseError("label: occlusion must be integral", line_no);
    }
    rec.occlusion = static_cast<int>(std::round(occ));
    rec.alpha = detail::parse_field(tokens[3], line_no, "alpha");
    rec.rect.umin = detail::parse_field(tokens[4], line_no, "left");
    rec.rect.vmin = detail::parse_field(tokens[5], line_no, "top");
    rec.rect.umax = detail::parse_field(tokens[6], line_no, "right");
    rec.rect.vmax = detail::parse_field(tokens[7], line_no, "bottom");
    rec.h = detail::parse_field(tokens[8], line_no, "height");
    rec.w = detail::parse_field(tokens[9], line_no, "width");
    rec.l = detail::parse_field(tokens[10], line_no, "length");
    rec.x = detail::parse_field(tokens[11], line_no, "x");
    rec.y = detail::parse_field(tokens[12], line_no, "y");
    rec.z = detail::parse_field(tokens[13], line_no, "z");
    rec.ry = detail::parse_field(tokens[14], line_no, "rotation_y");
    if (tokens.size() == 16) {
      rec.score = detail::parse_field(tokens[15], line_no, "score");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

/// Serializes records back to label-file text; numeric fields use the
/// shortest round-trip form so parse -> serialize -> parse is lossless.
inline std::string serialize_label_file(std::span<const LabelRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += r.category;
    for (double v : {r.truncation, static_cast<double>(r.occlusion), r.alpha,
                     r.rect.umin, r.rect.vmin, r.rect.umax, r.rect.vmax, r.h,
                     r.w, r.l, r.x, r.y, r.z, r.ry}) {
      out += ' ';
      out += format_double(v);
    }
    if (r.score.has_value()) {
      out += ' ';
      out += format_double(*r.score);
    }
    out += '\n';
  }
  return out;
}

/// Extracts pinhole intrinsics from the P2 (left color camera) row of a
/// KITTI calibration file: fu = P2[0][0], fv = P2[1][1], cu = P2[0][2],
/// cv = P2[1][2]. The translation column of P2 is ignored.
inline CameraIntrinsics parse_calib(std::string_view text) {
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto tokens = split_whitespace(lines[i]);
    if (tokens.empty() || tokens[0] != "P2:") continue;
    if (tokens.size() != 13) {
      throw ParseError("calib: P2 row must carry 12 values", i + 1);
    }
    std::array<double, 12> p{};
    for (int j = 0; j < 12; ++j) {
      const auto v = try_parse_double(tokens[j + 1]);
      if (!v.has_value()) throw ParseError("calib: unparsable P2 value", i + 1);
      p[j] = *v;
    }
    CameraIntrinsics k{p[0], p[5], p[2], p[6]};
    validate_intrinsics(k);
    return k;
  }
  throw ParseError("calib: missing P2 row", 1);
}

/// Converts a label to a cuboid: the bottom-center anchor lifts by h/2 in
/// the y-down camera frame. Sentinel (DontCare) records yield nullopt.
inline std::optional<Box3D> label_to_box(const LabelRecord& rec) {
  if (is_dont_care(rec)) return std::nullopt;
  Box3D box{rec.x, rec.y - rec.h / 2.0, rec.z, rec.l, rec.h, rec.w,
            normalize_yaw(rec.ry)};
  validate_box(box);
  return box;
}

/// Inverse of label_to_box for synthesizing fixtures: alpha is the viewing
/// angle ry - atan2(x, z).
inline LabelRecord label_from_box(const Box3D& box, const Rect2D& rect,
                                  const std::string& category = "Car") {
  validate_box(box);
  LabelRecord rec;
  rec.category = category;
  rec.alpha = normalize_yaw(box.ry - std::atan2(box.cx, box.cz));
  rec.rect = rect;
  rec.h = box.h;
  rec.w = box.w;
  rec.l = box.l;
  rec.x = box.cx;
  rec.y = box.cy + box.h / 2.0;
  rec.z = box.cz;
  rec.ry = normalize_yaw(box.ry);
  return rec;
}

/// Record filters applied before deviation statistics. The default excludes
/// truncated objects: image-boundary clipping of the 2D box breaks the
/// projected-rect equality being measured.
struct DeviationFilters {
  double max_truncation = 0.0;
  int max_occlusion = 3;
};

inline constexpr double kDeviationBinWidth = 0.25;  // pixels

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

struct EdgeStats {
  double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
  std::vector<HistogramBin> bins;
};

/// Per-edge pixel deviations between projected-corner extremes and the
/// labeled 2D box, as histograms with kDeviationBinWidth bins.
struct DeviationStats {
  EdgeStats du_min, du_max, dv_min, dv_max;
  std::size_t sample_count = 0;
};

namespace detail {

inline EdgeStats edge_stats(const std::vector<double>& samples) {
  EdgeStats s;
  if (samples.empty()) return s;
  double sum = 0.0;
  s.min = samples[0];
  s.max = samples[0];
  for (double v : samples) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / samples.size();
  double var = 0.0;
  for (double v : samples) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / samples.size());

  const double lo = std::floor(s.min / kDeviationBinWidth) * kDeviationBinWidth;
  const std::size_t n_bins = static_cast<std::size_t>(
      std::max(1.0, std::ceil((s.max - lo) / kDeviationBinWidth)));
  s.bins.resize(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) {
    s.bins[i].lo = lo + i * kDeviationBinWidth;
    s.bins[i].hi = lo + (i + 1) * kDeviationBinWidth;
  }
  for (double v : samples) {
    auto idx = static_cast<std::size_t>((v - lo) / kDeviationBinWidth);
    if (idx >= n_bins) idx = n_bins - 1;  // max lands on the last edge
    ++s.bins[idx].count;
  }
  return s;
}

}  // namespace detail

/// Streaming collector for deviation samples, so directories with per-file
/// calibrations can be merged into one set of statistics.
class DeviationAccumulator {
 public:
  /// Returns true when the record passed the filters and was measured.
  /// Records whose boxes are not fully in front of the camera are skipped.
  bool add(const LabelRecord& rec, const CameraIntrinsics& k,
           const DeviationFilters& filters = {}) {
    if (is_dont_care(rec)) return false;
    if (rec.truncation > filters.max_truncation) return false;
    if (rec.occlusion > filters.max_occlusion) return false;
    const auto box = label_to_box(rec);
    if (!box.has_value()) return false;
    Rect2D proj;
    try {
      proj = projected_enclosing_rect(*box, k);
    } catch (const BehindCameraError&) {
      return false;
    }
    du_min_.push_back(proj.umin - rec.rect.umin);
    du_max_.push_back(proj.umax - rec.rect.umax);
    dv_min_.push_back(proj.vmin - rec.rect.vmin);
    dv_max_.push_back(proj.vmax - rec.rect.vmax);
    return true;
  }

  std::size_t sample_count() const { return du_min_.size(); }

  /// nullopt when nothing passed the filters.
  std::optional<DeviationStats> finalize() const {
    if (du_min_.empty()) return std::nullopt;
    DeviationStats s;
    s.du_min = detail::edge_stats(du_min_);
    s.du_max = detail::edge_stats(du_max_);
    s.dv_min = detail::edge_stats(dv_min_);
    s.dv_max = detail::edge_stats(dv_max_);
    s.sample_count = du_min_.size();
    return s;
  }

 private:
  std::vector<double> du_min_, du_max_, dv_min_, dv_max_;
};

inline std::optional<DeviationStats> deviation_stats(
    std::span<const LabelRecord> records, const CameraIntrinsics& k,
    const DeviationFilters& filters = {}) {
  DeviationAccumulator acc;
  for (const auto& rec : records) acc.add(rec, k, filters);
  return acc.finalize();
}

namespace detail {

inline constexpr std::array<const char*, 4> kEdgeNames = {"du_min", "du_max",
                                                          "dv_min", "dv_max"};

inline std::array<const EdgeStats*, 4> edge_list(const DeviationStats& s) {
  return {&s.du_min, &s.du_max, &s.dv_min, &s.dv_max};
}

}  // namespace detail

/// Histogram rows as "edge,bin_lo,bin_hi,count" CSV.
inline std::string deviation_hist_csv(const DeviationStats& stats) {
  std::string out = "edge,bin_lo,bin_hi,count\n";
  const auto edges = detail::edge_list(stats);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    for (const auto& bin : edges[e]->bins) {
      out += std::string(detail::kEdgeNames[e]) + "," + format_double(bin.lo) +
             "," + format_double(bin.hi) + "," + std::to_string(bin.count) + "\n";
    }
  }
  return out;
}

/// Per-edge mean/stddev/min/max plus the sample count, as JSON.
inline nlohmann::ordered_json deviation_summary_json(const DeviationStats& stats) {
  nlohmann::ordered_json summary;
  summary["sample_count"] = stats.sample_count;
  summary["edges"] = nlohmann::ordered_json::object();
  const auto edges = detail::edge_list(stats);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    summary["edges"][detail::kEdgeNames[e]] =
        nlohmann::ordered_json{{"mean", edges[e]->mean},
                               {"stddev", edges[e]->stddev},
                               {"min", edges[e]->min},
                               {"max", edges[e]->max}};
  }
  return summary;
}

/// Synthetic scene generation ranges. Defaults keep every box (and its
/// jittered fits) strictly in front of the camera.
struct SceneRanges {
  double z_lo = 5.0, z_hi = 60.0;
  double lateral_frac = 0.3;  // |x| <= lateral_frac * z
  double y_lo = 0.5, y_hi = 2.0;
  double len_lo = 3.2, len_hi = 4.8;
  double height_lo = 1.3, height_hi = 1.9;
  double width_lo = 1.5, width_hi = 1.9;
  CameraIntrinsics intrinsics{721.5377, 721.5377, 609.5593, 172.854};
};

inline void validate_ranges(const SceneRanges& r) {
  auto ordered = [](double lo, double hi) {
    return std::isfinite(lo) && std::isfinite(hi) && lo <= hi;
  };
  if (!ordered(r.z_lo, r.z_hi) || !ordered(r.y_lo, r.y_hi) ||
      !ordered(r.len_lo, r.len_hi) || !ordered(r.height_lo, r.height_hi) ||
      !ordered(r.width_lo, r.width_hi)) {
    throw ConfigError("scene ranges: each [lo, hi] must be ordered and finite");
  }
  if (!(r.z_lo > 0.0) || !(r.lateral_frac >= 0.0) || !(r.len_lo > 0.0) ||
      !(r.height_lo > 0.0) || !(r.width_lo > 0.0)) {
    throw ConfigError("scene ranges: depths and dimensions must be positive");
  }
  validate_intrinsics(r.intrinsics);
  // worst-case horizontal half-diagonal must stay in front of the camera
  const double half_diag = 0.5 * std::hypot(r.len_hi, r.width_hi);
  if (!(r.z_lo - half_diag > kBehindCameraZEps)) {
    throw ConfigError("scene ranges: z_lo too small for the largest box");
  }
}

struct Scene {
  std::vector<Box3D> boxes;
  std::vector<Rect2D> rects;  // exact projected enclosing rects
  CameraIntrinsics intrinsics;
};

/// Seeded synthetic scene: boxes drawn from the ranges (per-box draw order
/// z, x, y, l, h, w, ry) with 2D rects generated as the exact projected
/// enclosing rects, so deviation statistics on a synthetic scene are zero.
inline Scene synth_scene(Rng& rng, std::size_t n, const SceneRanges& ranges = {}) {
  validate_ranges(ranges);
  Scene scene;
  scene.intrinsics = ranges.intrinsics;
  scene.boxes.reserve(n);
  scene.rects.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Box3D box;
    box.cz = rng.uniform(ranges.z_lo, ranges.z_hi);
    box.cx = rng.uniform(-ranges.lateral_frac, ranges.lateral_frac) * box.cz;
    box.cy = rng.uniform(ranges.y_lo, ranges.y_hi);
    box.l = rng.uniform(ranges.len_lo, ranges.len_hi);
    box.h = rng.uniform(ranges.height_lo, ranges.height_hi);
    box.w = rng.uniform(ranges.width_lo, ranges.width_hi);
    box.ry = rng.uniform(-std::numbers::pi, std::numbers::pi);
    scene.boxes.push_back(box);
    scene.rects.push_back(projected_enclosing_rect(box, scene.intrinsics));
  }
  return scene;
}

}  // namespace boxalign
