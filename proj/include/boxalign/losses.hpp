#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "boxalign/geometry.hpp"
#include "boxalign/rng.hpp"

namespace boxalign {

/// Two corner projections closer than this are an extremum tie.
inline constexpr double kTieTolerance = 1e-12;
/// Relative tolerance for deciding whether two tied candidates carry the
/// same derivative (ties between equal-gradient corners are not ambiguous).
inline constexpr double kTieGradTolerance = 1e-9;
inline constexpr double kUnitAxisTolerance = 1e-9;
inline constexpr double kAxisDedupeTolerance = 1e-9;

/// Closed interval of corner projections along one axis (meters).
struct Interval1D {
  double lo = 0.0, hi = 0.0;
};

/// Axis-aligned pixel rectangle.
struct Rect2D {
  double umin = 0.0, umax = 0.0;
  double vmin = 0.0, vmax = 0.0;

  double width() const { return umax - umin; }
  double height() const { return vmax - vmin; }
  double area() const { return width() * height(); }
};

/// Which box supplies the projection axes for the marginalized 3D GIoU.
enum class AxisSource { kPred, kGt, kUnion };

/// Diagnostics surfaced alongside scalar losses. kink_margin is the smallest
/// value gap seen at any extremum or clamp whose competing branches carry
/// different gradients; a margin at or below kTieTolerance is a tie.
struct EvalFlags {
  bool degenerate = false;  // zero-measure interval/rect convention applied
  bool tie = false;         // ambiguous corner-projection extremum
  double kink_margin = std::numeric_limits<double>::infinity();
};

inline void validate_interval(const Interval1D& iv) {
  if (!(std::isfinite(iv.lo) && std::isfinite(iv.hi)) || iv.lo > iv.hi) {
    throw std::invalid_argument("interval: requires finite lo <= hi");
  }
}

inline void validate_rect(const Rect2D& r) {
  if (!(std::isfinite(r.umin) && std::isfinite(r.umax) &&
        std::isfinite(r.vmin) && std::isfinite(r.vmax)) ||
      r.umin > r.umax || r.vmin > r.vmax) {
    throw std::invalid_argument("rect: requires finite umin <= umax, vmin <= vmax");
  }
}

namespace detail {

// first argument wins exact ties in every extremum scan
template <class T>
T pick_min(const T& a, const T& b) {
  return scalar_value(b) < scalar_value(a) ? b : a;
}

template <class T>
T pick_max(const T& a, const T& b) {
  return scalar_value(b) > scalar_value(a) ? b : a;
}

inline bool gradient_differs(double, double) { return false; }

template <std::size_t N>
bool gradient_differs(const Dual<N>& a, const Dual<N>& b) {
  for (std::size_t i = 0; i < N; ++i) {
    const double scale =
        std::max(1.0, std::max(std::abs(a.deriv[i]), std::abs(b.deriv[i])));
    if (std::abs(a.deriv[i] - b.deriv[i]) > kTieGradTolerance * scale) {
      return true;
    }
  }
  return false;
}

template <class T>
struct Extrema {
  T lo, hi;
};

/// Records the gap between two competing branches whose gradients differ;
/// gaps at or below kTieTolerance mark the evaluation as tied.
template <class T>
void note_branch_gap(const T& chosen, const T& other, EvalFlags* flags) {
  if (flags == nullptr || !gradient_differs(chosen, other)) return;
  const double gap = std::abs(scalar_value(chosen) - scalar_value(other));
  flags->kink_margin = std::min(flags->kink_margin, gap);
  if (gap <= kTieTolerance) flags->tie = true;
}

/// Min/max over the eight values, noting near-ambiguous extrema.
template <class T>
Extrema<T> scan_extrema(const std::array<T, 8>& vals, EvalFlags* flags) {
  T lo = vals[0];
  T hi = vals[0];
  for (int i = 1; i < 8; ++i) {
    lo = pick_min(lo, vals[i]);
    hi = pick_max(hi, vals[i]);
  }
  if (flags != nullptr) {
    for (int i = 0; i < 8; ++i) {
      note_branch_gap(lo, vals[i], flags);
      note_branch_gap(hi, vals[i], flags);
    }
  }
  return {lo, hi};
}

template <class CornerT, class AxisT>
auto corner_axis_extrema(const Corners<CornerT>& corners,
                         const Vec3<AxisT>& axis, EvalFlags* flags) {
  using R = decltype(dot(corners[0], axis));
  std::array<R, 8> proj;
  for (int i = 0; i < 8; ++i) proj[i] = dot(corners[i], axis);
  return scan_extrema(proj, flags);
}

/// 1D generalized IoU on interval endpoints. Union is the measure
/// |P| + |G| - |P∩G|. Two identical degenerate intervals score 1, two
/// distinct degenerate intervals -1; both cases are flagged.
template <class T>
T giou_1d_impl(const T& p_lo, const T& p_hi, const T& g_lo, const T& g_hi,
               EvalFlags* flags) {
  note_branch_gap(p_hi, g_hi, flags);
  note_branch_gap(p_lo, g_lo, flags);
  const T len_p = p_hi - p_lo;
  const T len_g = g_hi - g_lo;
  const T raw = pick_min(p_hi, g_hi) - pick_max(p_lo, g_lo);
  note_branch_gap(T(0.0), raw, flags);
  const T inter = pick_max(T(0.0), raw);
  const T uni = len_p + len_g - inter;
  const T hull = pick_max(p_hi, g_hi) - pick_min(p_lo, g_lo);
  if (scalar_value(uni) == 0.0) {
    if (flags != nullptr) flags->degenerate = true;
    return scalar_value(hull) == 0.0 ? T(1.0) : T(-1.0);
  }
  return inter / uni - (hull - uni) / hull;
}

template <class T>
Vec3<T> lift_vec(const Vec3d& v) {
  return {T(v.x), T(v.y), T(v.z)};
}

}  // namespace detail

/// Projection interval of the eight corners onto a unit axis.
inline Interval1D project_corners_on_axis(const Corners3D& corners,
                                          const Vec3d& axis) {
  if (std::abs(norm(axis) - 1.0) > kUnitAxisTolerance) {
    throw std::invalid_argument("project_corners_on_axis: axis must be unit length");
  }
  const auto e = detail::corner_axis_extrema(corners, axis, nullptr);
  return {e.lo, e.hi};
}

inline double giou_1d(const Interval1D& p, const Interval1D& g,
                      EvalFlags* flags = nullptr) {
  validate_interval(p);
  validate_interval(g);
  return detail::giou_1d_impl(p.lo, p.hi, g.lo, g.hi, flags);
}

namespace detail {

/// Marginalized 3D GIoU: mean of per-axis 1D GIoUs of the corner
/// projections. The axis set comes from the predicted box, the ground-truth
/// box, or their union (vertical axis and near-equal horizontal normals
/// deduplicated).
template <class T>
T mgiou_3d_impl(const Box<T>& pred, const Box3D& gt, AxisSource source,
                EvalFlags* flags) {
  const Corners<T> pred_corners = corners_from_box(pred);
  const Corners3D gt_corners = corners_from_box(gt);

  std::array<Vec3<T>, 5> axes;
  int n_axes = 0;
  if (source == AxisSource::kPred || source == AxisSource::kUnion) {
    for (const auto& a : face_normals(pred)) axes[n_axes++] = a;
  }
  if (source == AxisSource::kGt) {
    for (const auto& a : face_normals(gt)) axes[n_axes++] = lift_vec<T>(a);
  }
  if (source == AxisSource::kUnion) {
    const auto gt_axes = face_normals(gt);
    for (int k : {0, 2}) {  // the vertical normal is shared by construction
      bool duplicate = false;
      for (int j = 0; j < n_axes; ++j) {
        if (std::abs(scalar_value(axes[j].x) - gt_axes[k].x) <= kAxisDedupeTolerance &&
            std::abs(scalar_value(axes[j].y) - gt_axes[k].y) <= kAxisDedupeTolerance &&
            std::abs(scalar_value(axes[j].z) - gt_axes[k].z) <= kAxisDedupeTolerance) {
          duplicate = true;
          break;
        }
      }
      if (!duplicate) axes[n_axes++] = lift_vec<T>(gt_axes[k]);
    }
  }

  T acc(0.0);
  for (int k = 0; k < n_axes; ++k) {
    const auto p = corner_axis_extrema(pred_corners, axes[k], flags);
    const auto g = corner_axis_extrema(gt_corners, axes[k], flags);
    acc += giou_1d_impl(p.lo, p.hi, g.lo, g.hi, flags);
  }
  return acc / static_cast<double>(n_axes);
}

template <class T>
T spatial_loss_impl(const Box<T>& pred, const Box3D& gt, AxisSource source,
                    EvalFlags* flags) {
  return (1.0 - mgiou_3d_impl(pred, gt, source, flags)) * 0.5;
}

template <class T>
struct RectT {
  T umin, umax, vmin, vmax;
};

/// Axis-aligned enclosing rectangle of the eight projected corners. Every
/// corner must be strictly in front of the camera; the error names the
/// first offending corner.
template <class T>
RectT<T> enclosing_rect_impl(const Box<T>& box, const CameraIntrinsics& k,
                             EvalFlags* flags) {
  const Corners<T> corners = corners_from_box(box);
  for (int i = 0; i < 8; ++i) {
    if (!(scalar_value(corners[i].z) > kBehindCameraZEps)) {
      throw BehindCameraError(scalar_value(corners[i].z), i);
    }
  }
  std::array<T, 8> us, vs;
  for (int i = 0; i < 8; ++i) {
    const auto pix = project_point(corners[i], k);
    us[i] = pix.u;
    vs[i] = pix.v;
  }
  const auto ue = scan_extrema(us, flags);
  const auto ve = scan_extrema(vs, flags);
  return {ue.lo, ue.hi, ve.lo, ve.hi};
}

/// 2D generalized IoU of axis-aligned rectangles. Degenerate-measure
/// conventions mirror the 1D case.
template <class T>
T giou_2d_impl(const RectT<T>& a, const RectT<T>& b, EvalFlags* flags) {
  note_branch_gap(a.umin, b.umin, flags);
  note_branch_gap(a.umax, b.umax, flags);
  note_branch_gap(a.vmin, b.vmin, flags);
  note_branch_gap(a.vmax, b.vmax, flags);
  const T area_a = (a.umax - a.umin) * (a.vmax - a.vmin);
  const T area_b = (b.umax - b.umin) * (b.vmax - b.vmin);
  const T raw_w = pick_min(a.umax, b.umax) - pick_max(a.umin, b.umin);
  const T raw_h = pick_min(a.vmax, b.vmax) - pick_max(a.vmin, b.vmin);
  note_branch_gap(T(0.0), raw_w, flags);
  note_branch_gap(T(0.0), raw_h, flags);
  const T inter_w = pick_max(T(0.0), raw_w);
  const T inter_h = pick_max(T(0.0), raw_h);
  const T inter = inter_w * inter_h;
  const T uni = area_a + area_b - inter;
  if (scalar_value(uni) == 0.0) {
    if (flags != nullptr) flags->degenerate = true;
    const bool identical = scalar_value(a.umin) == scalar_value(b.umin) &&
                           scalar_value(a.umax) == scalar_value(b.umax) &&
                           scalar_value(a.vmin) == scalar_value(b.vmin) &&
                           scalar_value(a.vmax) == scalar_value(b.vmax);
    return identical ? T(1.0) : T(-1.0);
  }
  const T hull = (pick_max(a.umax, b.umax) - pick_min(a.umin, b.umin)) *
                 (pick_max(a.vmax, b.vmax) - pick_min(a.vmin, b.vmin));
  return inter / uni - (hull - uni) / hull;
}

template <class T>
RectT<T> lift_rect(const Rect2D& r) {
  return {T(r.umin), T(r.umax), T(r.vmin), T(r.vmax)};
}

template <class T>
T projection_loss_impl(const Box<T>& box, const CameraIntrinsics& k,
                       const Rect2D& gt_rect, EvalFlags* flags) {
  validate_rect(gt_rect);
  const RectT<T> proj = enclosing_rect_impl(box, k, flags);
  return 1.0 - giou_2d_impl(proj, lift_rect<T>(gt_rect), flags);
}

template <class T>
T depth_loss_impl(double focal, const T& h3d, double h2d, double z_err,
                  double z_gt, double sigma_d) {
  if (!(std::isfinite(focal) && std::isfinite(h2d) && std::isfinite(z_err) &&
        std::isfinite(z_gt) && std::isfinite(sigma_d)) ||
      !scalar_finite(h3d)) {
    throw std::invalid_argument("depth_loss: non-finite input");
  }
  if (!(h2d > 0.0)) throw std::invalid_argument("depth_loss: h2d must be positive");
  if (!(sigma_d > 0.0)) throw std::invalid_argument("depth_loss: sigma_d must be positive");
  using std::abs;
  const T residual = focal * h3d / h2d + z_err - z_gt;
  return (std::numbers::sqrt2 / sigma_d) * abs(residual) + std::log(sigma_d);
}

}  // namespace detail

inline double mgiou_3d(const Box3D& pred, const Box3D& gt,
                       AxisSource source = AxisSource::kPred,
                       EvalFlags* flags = nullptr) {
  validate_box(pred);
  validate_box(gt);
  return detail::mgiou_3d_impl(pred, gt, source, flags);
}

/// Spatial alignment loss (1 - MGIoU3D) / 2, in [0, 1).
inline double spatial_point_alignment_loss(const Box3D& pred, const Box3D& gt,
                                           AxisSource source = AxisSource::kPred,
                                           EvalFlags* flags = nullptr) {
  validate_box(pred);
  validate_box(gt);
  return detail::spatial_loss_impl(pred, gt, source, flags);
}

inline Rect2D projected_enclosing_rect(const Box3D& box,
                                       const CameraIntrinsics& k) {
  validate_box(box);
  const auto r = detail::enclosing_rect_impl(box, k, nullptr);
  return {r.umin, r.umax, r.vmin, r.vmax};
}

inline double giou_2d(const Rect2D& a, const Rect2D& b,
                      EvalFlags* flags = nullptr) {
  validate_rect(a);
  validate_rect(b);
  return detail::giou_2d_impl(detail::lift_rect<double>(a),
                              detail::lift_rect<double>(b), flags);
}

/// Projection alignment loss 1 - GIoU2D(projected rect, target rect),
/// in [0, 2).
inline double projection_alignment_loss(const Box3D& box,
                                        const CameraIntrinsics& k,
                                        const Rect2D& gt_rect,
                                        EvalFlags* flags = nullptr) {
  validate_box(box);
  return detail::projection_loss_impl(box, k, gt_rect, flags);
}

/// Inputs of the uncertainty-weighted projective depth loss.
struct DepthTerm {
  double f = 0.0;        // focal length, pixels
  double h3d = 0.0;      // 3D box height, meters
  double h2d = 0.0;      // 2D box height, pixels (> 0)
  double z_err = 0.0;    // predicted geometric depth correction, meters
  double z_gt = 0.0;     // ground-truth depth, meters
  double sigma_d = 1.0;  // Laplace scale (> 0)
};

/// sqrt(2)/sigma * |f*h3d/h2d + z_err - z_gt| + log(sigma).
inline double depth_loss(const DepthTerm& t) {
  return detail::depth_loss_impl(t.f, t.h3d, t.h2d, t.z_err, t.z_gt, t.sigma_d);
}

/// Fixed base weights of every loss stream.
struct LossWeights {
  double cls = 2.0, dim2d = 5.0, center2d = 2.0, giou2d = 10.0;  // 2D terms
  double dim3d = 1.0, angle = 1.0, depth = 1.0;                  // 3D terms
  double dmap = 1.0, region = 1.0;                               // image-level terms
  double corner = 1.0, proj = 1.0;                               // alignment terms
};

/// Aggregated loss terms for one batch. Per-object terms hold sums over the
/// n_gt ground-truth objects; "dmap" and "region" are batch-level scalars.
/// Host-detector terms enter as opaque precomputed values. Omegas are the
/// scheduler weights per term id and default to 1 when absent.
struct LossBreakdown {
  std::map<std::string, double> terms;
  int n_gt = 1;
  LossWeights weights;
  std::map<std::string, double> omegas;
};

namespace detail {

struct TermSpec {
  const char* id;
  double LossWeights::*weight;
  bool per_object;
};

inline constexpr std::array<TermSpec, 11> kTermSpecs = {{
    {"class", &LossWeights::cls, true},
    {"dim2d", &LossWeights::dim2d, true},
    {"center2d", &LossWeights::center2d, true},
    {"giou2d", &LossWeights::giou2d, true},
    {"dim3d", &LossWeights::dim3d, true},
    {"angle", &LossWeights::angle, true},
    {"depth", &LossWeights::depth, true},
    {"corner", &LossWeights::corner, true},
    {"proj", &LossWeights::proj, true},
    {"dmap", &LossWeights::dmap, false},
    {"region", &LossWeights::region, false},
}};

}  // namespace detail

/// 1/n_gt * sum of weighted per-object terms + weighted batch terms.
/// Every term with a nonzero weight must be present.
inline double total_loss(const LossBreakdown& b) {
  for (const auto& [id, value] : b.terms) {
    const bool known =
        std::any_of(detail::kTermSpecs.begin(), detail::kTermSpecs.end(),
                    [&](const auto& s) { return id == s.id; });
    if (!known) throw ConfigError("total_loss: unknown loss term '" + id + "'");
    if (!std::isfinite(value)) {
      throw std::invalid_argument("total_loss: non-finite term '" + id + "'");
    }
  }
  double per_object = 0.0;
  double batch = 0.0;
  bool any_per_object = false;
  for (const auto& spec : detail::kTermSpecs) {
    const double lambda = b.weights.*spec.weight;
    if (lambda == 0.0) continue;
    const auto it = b.terms.find(spec.id);
    if (it == b.terms.end()) {
      throw ConfigError(std::string("total_loss: missing loss term '") +
                        spec.id + "'");
    }
    const auto om = b.omegas.find(spec.id);
    const double omega = om == b.omegas.end() ? 1.0 : om->second;
    const double contribution = lambda * omega * it->second;
    if (spec.per_object) {
      per_object += contribution;
      any_per_object = true;
    } else {
      batch += contribution;
    }
  }
  if (any_per_object && b.n_gt < 1) {
    throw std::invalid_argument("total_loss: n_gt must be >= 1");
  }
  return (any_per_object ? per_object / b.n_gt : 0.0) + batch;
}

/// Adds independent uniform noise in [-magnitude, +magnitude] to each rect
/// coordinate (draw order umin, umax, vmin, vmax), then re-sorts each axis
/// pair so the result is a valid rect.
inline Rect2D perturb_rect(const Rect2D& rect, double magnitude, Rng& rng) {
  validate_rect(rect);
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw std::invalid_argument("perturb_rect: magnitude must be >= 0");
  }
  double u0 = rect.umin + rng.uniform(-magnitude, magnitude);
  double u1 = rect.umax + rng.uniform(-magnitude, magnitude);
  double v0 = rect.vmin + rng.uniform(-magnitude, magnitude);
  double v1 = rect.vmax + rng.uniform(-magnitude, magnitude);
  if (u0 > u1) std::swap(u0, u1);
  if (v0 > v1) std::swap(v0, v1);
  return {u0, u1, v0, v1};
}

}  // namespace boxalign
