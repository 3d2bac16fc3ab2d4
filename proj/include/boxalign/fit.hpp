#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "boxalign/grad.hpp"
#include "boxalign/kitti.hpp"

namespace boxalign {

/// The noise sweep levels of the robustness protocol, in pixels.
inline constexpr std::array<double, 5> kNoiseLevelsPx = {0.0, 2.0, 5.0, 10.0, 15.0};

/// Box-fitting configuration. The objective is
/// lambda_corner * spatial loss + lambda_proj * projection loss, minimized
/// by gradient descent with per-iteration step halving (cap 20 halvings).
/// The spatial term defaults to the union axis set: descending the
/// pred-axes loss stalls in yaw/width compensation minima that the union
/// projections expose (measured 67/100 vs 100/100 scene convergence).
struct FitConfig {
  double lambda_corner = 1.0;
  double lambda_proj = 1.0;
  AxisSource axis_source = AxisSource::kUnion;
  double step_size = 1.0;
  int max_iterations = 2000;
  double rmse_threshold = 0.05;    // meters, over the 8 corner pairs
  double init_center_jitter = 0.5; // meters per axis
  double init_dims_jitter = 0.1;   // fraction per dimension
  double init_yaw_jitter = 0.2;    // radians
  double rect_noise_px = 0.0;      // used by single-scene fits
  std::uint64_t seed = 0;
};

inline void validate_config(const FitConfig& cfg) {
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size)) {
    throw ConfigError("fit config: step_size must be positive");
  }
  if (cfg.max_iterations < 1) {
    throw ConfigError("fit config: max_iterations must be >= 1");
  }
  if (!(cfg.rmse_threshold > 0.0) || !std::isfinite(cfg.rmse_threshold)) {
    throw ConfigError("fit config: rmse_threshold must be positive");
  }
  if (!(cfg.lambda_corner >= 0.0) || !(cfg.lambda_proj >= 0.0) ||
      !std::isfinite(cfg.lambda_corner) || !std::isfinite(cfg.lambda_proj)) {
    throw ConfigError("fit config: loss weights must be non-negative");
  }
  if (!(cfg.init_center_jitter >= 0.0) || !(cfg.init_dims_jitter >= 0.0) ||
      !(cfg.init_yaw_jitter >= 0.0) || !(cfg.rect_noise_px >= 0.0)) {
    throw ConfigError("fit config: jitter magnitudes must be >= 0");
  }
  if (cfg.init_dims_jitter >= 1.0) {
    throw ConfigError("fit config: init_dims_jitter must be < 1");
  }
}

/// Root-mean-square distance over the 8 corresponding corner pairs, meters.
inline double corner_rmse(const Box3D& a, const Box3D& b) {
  const Corners3D ca = corners_from_box(a);
  const Corners3D cb = corners_from_box(b);
  double acc = 0.0;
  for (int i = 0; i < 8; ++i) {
    const Vec3d d = ca[i] - cb[i];
    acc += dot(d, d);
  }
  return std::sqrt(acc / 8.0);
}

/// Initial guess: ground truth with uniform jitter (draw order cx, cy, cz,
/// then multiplicative dims l, h, w, then yaw).
inline Box3D perturb_box(const Box3D& gt, const FitConfig& cfg, Rng& rng) {
  Box3D init = gt;
  init.cx += rng.uniform(-cfg.init_center_jitter, cfg.init_center_jitter);
  init.cy += rng.uniform(-cfg.init_center_jitter, cfg.init_center_jitter);
  init.cz += rng.uniform(-cfg.init_center_jitter, cfg.init_center_jitter);
  init.l *= 1.0 + rng.uniform(-cfg.init_dims_jitter, cfg.init_dims_jitter);
  init.h *= 1.0 + rng.uniform(-cfg.init_dims_jitter, cfg.init_dims_jitter);
  init.w *= 1.0 + rng.uniform(-cfg.init_dims_jitter, cfg.init_dims_jitter);
  init.ry += rng.uniform(-cfg.init_yaw_jitter, cfg.init_yaw_jitter);
  return init;
}

struct FitResult {
  Box3D final_box{};
  double initial_loss = 0.0;
  std::vector<double> loss_trajectory;  // objective after each accepted step
  double corner_rmse = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline bool box_in_front(const Box3D& box) {
  for (const auto& c : corners_from_box(box)) {
    if (!(c.z > kBehindCameraZEps)) return false;
  }
  return true;
}

inline bool box_valid_candidate(const Box3D& box) {
  if (!(box.l > 0.0 && box.h > 0.0 && box.w > 0.0)) return false;
  return box_in_front(box);
}

struct ObjectiveEval {
  double value = 0.0;
  Grad7 grad{};
};

template <class T>
T fit_objective(const Box<T>& box, const Box3D& gt, const CameraIntrinsics& k,
                const Rect2D& gt_rect, const FitConfig& cfg) {
  T total(0.0);
  if (cfg.lambda_corner != 0.0) {
    total += cfg.lambda_corner * spatial_loss_impl(box, gt, cfg.axis_source, nullptr);
  }
  if (cfg.lambda_proj != 0.0) {
    total += cfg.lambda_proj * projection_loss_impl(box, k, gt_rect, nullptr);
  }
  return total;
}

/// Projector onto the null space of the projected-rect-edge Jacobian: the
/// component of a direction that keeps all four rect edges stationary to
/// first order. Near the projection optimum the rect-matching walls are
/// steep V-creases; descent survives only along this manifold.
class RectManifoldProjector {
 public:
  static std::optional<RectManifoldProjector> make(const Box3D& box,
                                                   const CameraIntrinsics& k) {
    RectManifoldProjector proj;
    proj.jac_ = projected_rect_jacobian(box, k);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < kBoxParamCount; ++p) {
          acc += proj.jac_[r][p] * proj.jac_[c][p];
        }
        proj.lu_[r][c] = acc;
      }
      proj.perm_[r] = r;
    }
    // LU with partial pivoting; a singular system means the rect edges do
    // not constrain four independent directions here
    for (int col = 0; col < 4; ++col) {
      int pivot = col;
      for (int r = col + 1; r < 4; ++r) {
        if (std::abs(proj.lu_[r][col]) > std::abs(proj.lu_[pivot][col])) pivot = r;
      }
      if (std::abs(proj.lu_[pivot][col]) < 1e-12) return std::nullopt;
      if (pivot != col) {
        for (int c = 0; c < 4; ++c) std::swap(proj.lu_[pivot][c], proj.lu_[col][c]);
        std::swap(proj.perm_[pivot], proj.perm_[col]);
      }
      for (int r = col + 1; r < 4; ++r) {
        proj.lu_[r][col] /= proj.lu_[col][col];
        for (int c = col + 1; c < 4; ++c) {
          proj.lu_[r][c] -= proj.lu_[r][col] * proj.lu_[col][c];
        }
      }
    }
    return proj;
  }

  Grad7 project(const Grad7& v) const {
    double rhs[4];
    for (int r = 0; r < 4; ++r) {
      double acc = 0.0;
      for (std::size_t p = 0; p < kBoxParamCount; ++p) acc += jac_[r][p] * v[p];
      rhs[r] = acc;
    }
    double y[4];
    for (int r = 0; r < 4; ++r) {
      double acc = rhs[perm_[r]];
      for (int c = 0; c < r; ++c) acc -= lu_[r][c] * y[c];
      y[r] = acc;
    }
    double x[4];
    for (int r = 3; r >= 0; --r) {
      double acc = y[r];
      for (int c = r + 1; c < 4; ++c) acc -= lu_[r][c] * x[c];
      x[r] = acc / lu_[r][r];
    }
    Grad7 out{};
    for (std::size_t p = 0; p < kBoxParamCount; ++p) {
      out[p] = v[p];
      for (int r = 0; r < 4; ++r) out[p] -= jac_[r][p] * x[r];
    }
    return out;
  }

 private:
  std::array<Grad7, 4> jac_{};
  double lu_[4][4]{};
  int perm_[4]{};
};

inline double direction_norm2(const Grad7& d) {
  double acc = 0.0;
  for (double v : d) acc += v * v;
  return acc;
}

inline ObjectiveEval eval_with_grad(const Box3D& box, const Box3D& gt,
                                    const CameraIntrinsics& k,
                                    const Rect2D& gt_rect, const FitConfig& cfg) {
  const auto dual = fit_objective(seed_box(box), gt, k, gt_rect, cfg);
  return {dual.value, dual.deriv};
}

}  // namespace detail

inline constexpr int kStepHalvingCap = 20;

namespace detail {

/// Backtracks along one direction: largest halving of start_step that
/// strictly descends. Returns whether the best-so-far was improved.
template <class Objective>
bool try_direction(const Box3D& box, const Grad7& direction, double start_step,
                   const Objective& objective, Box3D& best_box,
                   double& best_loss) {
  double step = start_step;
  for (int halving = 0; halving <= kStepHalvingCap; ++halving) {
    Box3D candidate = box;
    for (std::size_t p = 0; p < kBoxParamCount; ++p) {
      box_param(candidate, p) += step * direction[p];
    }
    if (box_valid_candidate(candidate)) {
      const double loss = objective(candidate);
      if (loss < best_loss) {
        best_box = candidate;
        best_loss = loss;
        return true;
      }
    }
    step *= 0.5;
  }
  return false;
}

}  // namespace detail

/// Gradient descent on the combined alignment objective, hardened for its
/// piecewise-smooth landscape. Per iteration the candidate moves are the
/// backtracked negative-gradient step (step restarts at cfg.step_size and
/// halves up to kStepHalvingCap times), a pattern move along the previous
/// accepted displacement, the rect-manifold-projected spatial gradient, and
/// a backtracked sweep of the box's own frame, raw and manifold-projected
/// (the spatial creases are separable in the rotated center coordinates,
/// so the sweep can walk crease bottoms the raw gradient zigzags across).
/// The best strictly-decreasing candidate wins; candidates with
/// non-positive dimensions or corners behind the camera are rejected, so
/// the loss trajectory is monotone non-increasing. Stops at the corner-RMSE
/// convergence threshold, the iteration cap, or when no move descends.
inline FitResult fit_box(const Box3D& init, const Box3D& gt_box,
                         const CameraIntrinsics& k, const Rect2D& gt_rect,
                         const FitConfig& cfg) {
  validate_config(cfg);
  validate_box(init);
  validate_box(gt_box);
  validate_rect(gt_rect);
  validate_intrinsics(k);
  if (!detail::box_in_front(init)) {
    throw std::invalid_argument("fit_box: init box behind camera");
  }
  if (!detail::box_in_front(gt_box)) {
    throw std::invalid_argument("fit_box: gt box behind camera");
  }

  FitResult result;
  Box3D box = init;
  auto objective = [&](const Box3D& b) {
    return detail::fit_objective(b, gt_box, k, gt_rect, cfg);
  };
  result.initial_loss = objective(box);

  double current = result.initial_loss;
  Grad7 last_move{};
  bool have_last_move = false;
  while (true) {
    result.corner_rmse = corner_rmse(box, gt_box);
    if (result.corner_rmse < cfg.rmse_threshold) {
      result.converged = true;
      break;
    }
    if (result.iterations >= cfg.max_iterations) break;

    const auto eval = detail::eval_with_grad(box, gt_box, k, gt_rect, cfg);
    double grad_norm2 = 0.0;
    for (double g : eval.grad) grad_norm2 += g * g;
    if (grad_norm2 == 0.0) break;

    Box3D next = box;
    double next_loss = current;
    Grad7 direction{};
    for (std::size_t p = 0; p < kBoxParamCount; ++p) direction[p] = -eval.grad[p];
    detail::try_direction(box, direction, cfg.step_size, objective, next,
                          next_loss);
    if (have_last_move) {
      detail::try_direction(box, last_move, 2.0, objective, next, next_loss);
    }
    std::optional<detail::RectManifoldProjector> manifold;
    if (cfg.lambda_corner != 0.0 && cfg.lambda_proj != 0.0) {
      manifold = detail::RectManifoldProjector::make(box, k);
    }
    if (manifold.has_value()) {
      const GradResult spatial = grad_spatial_loss(box, gt_box, cfg.axis_source);
      Grad7 downhill{};
      for (std::size_t p = 0; p < kBoxParamCount; ++p) {
        downhill[p] = -spatial.partials[p];
      }
      const Grad7 along = manifold->project(downhill);
      if (detail::direction_norm2(along) > 0.0) {
        detail::try_direction(box, along, cfg.step_size, objective, next,
                              next_loss);
      }
    }
    const auto normals = face_normals(box);
    Grad7 sweep[7]{};
    for (int axis = 0; axis < 3; ++axis) {
      sweep[axis][0] = normals[axis].x;
      sweep[axis][1] = normals[axis].y;
      sweep[axis][2] = normals[axis].z;
    }
    for (std::size_t p = 3; p < kBoxParamCount; ++p) sweep[p][p] = 1.0;
    for (const auto& axis : sweep) {
      for (double sign : {-1.0, 1.0}) {
        Grad7 dir{};
        for (std::size_t p = 0; p < kBoxParamCount; ++p) dir[p] = sign * axis[p];
        detail::try_direction(box, dir, cfg.step_size, objective, next,
                              next_loss);
        if (manifold.has_value()) {
          const Grad7 tangent = manifold->project(dir);
          if (detail::direction_norm2(tangent) > 1e-12) {
            detail::try_direction(box, tangent, cfg.step_size, objective, next,
                                  next_loss);
          }
        }
      }
    }
    if (!(next_loss < current)) break;

    for (std::size_t p = 0; p < kBoxParamCount; ++p) {
      last_move[p] = box_param(next, p) - box_param(box, p);
    }
    have_last_move = true;
    box = next;
    current = next_loss;
    result.loss_trajectory.push_back(current);
    ++result.iterations;
  }

  result.final_box = box;
  return result;
}

struct SuiteSceneResult {
  double noise_px = 0.0;
  int scene = 0;
  bool converged = false;
  int iterations = 0;
  double rmse = 0.0;
  double final_loss = 0.0;
};

struct SuiteLevelSummary {
  double noise_px = 0.0;
  int scenes = 0;
  int converged = 0;
  double convergence_rate = 0.0;
  double median_rmse = 0.0;
  double median_iterations = 0.0;
};

struct SuiteReport {
  std::vector<SuiteLevelSummary> levels;
  std::vector<SuiteSceneResult> per_scene;
};

namespace detail {

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

/// Noise-robustness sweep: n_scenes seeded synthetic scenes, the same
/// jittered init per scene at every level, and the target rect perturbed by
/// the level's magnitude. Scenes are independent, so each level fans out
/// across hardware threads; substreams are derived per (purpose, level,
/// scene) and results land by scene index, so the report is reproducible
/// bit-for-bit regardless of scheduling.
inline SuiteReport run_fit_suite(const FitConfig& cfg, int n_scenes,
                                 std::span<const double> noise_levels = kNoiseLevelsPx,
                                 const SceneRanges& ranges = {}) {
  validate_config(cfg);
  if (n_scenes < 1) throw ConfigError("fit suite: n_scenes must be >= 1");
  if (noise_levels.empty()) throw ConfigError("fit suite: no noise levels");
  for (double level : noise_levels) {
    if (!(level >= 0.0)) throw ConfigError("fit suite: noise level must be >= 0");
  }

  const Rng master(cfg.seed);
  Rng scene_rng = master.fork(0);
  const Scene scene = synth_scene(scene_rng, static_cast<std::size_t>(n_scenes), ranges);

  SuiteReport report;
  for (std::size_t li = 0; li < noise_levels.size(); ++li) {
    const double level = noise_levels[li];
    std::vector<SuiteSceneResult> results(static_cast<std::size_t>(n_scenes));
    std::atomic<int> next_scene{0};
    std::atomic<bool> failed{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
      while (true) {
        const int i = next_scene.fetch_add(1);
        if (i >= n_scenes || failed.load()) return;
        try {
          Rng init_rng = master.fork(1).fork(static_cast<std::uint64_t>(i));
          Rng noise_rng =
              master.fork(2).fork(li).fork(static_cast<std::uint64_t>(i));
          const Box3D& gt = scene.boxes[static_cast<std::size_t>(i)];
          const Rect2D exact = scene.rects[static_cast<std::size_t>(i)];
          const Box3D init = perturb_box(gt, cfg, init_rng);
          const Rect2D rect =
              level > 0.0 ? perturb_rect(exact, level, noise_rng) : exact;
          const FitResult fit = fit_box(init, gt, scene.intrinsics, rect, cfg);
          results[static_cast<std::size_t>(i)] =
              {level, i, fit.converged, fit.iterations, fit.corner_rmse,
               fit.loss_trajectory.empty() ? fit.initial_loss
                                           : fit.loss_trajectory.back()};
        } catch (...) {
          const std::scoped_lock lock(failure_mutex);
          if (failure == nullptr) failure = std::current_exception();
          failed.store(true);
          return;
        }
      }
    };
    const unsigned hardware = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads =
        std::min<unsigned>(hardware, static_cast<unsigned>(n_scenes));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure != nullptr) std::rethrow_exception(failure);

    SuiteLevelSummary summary;
    summary.noise_px = level;
    summary.scenes = n_scenes;
    std::vector<double> rmses, iterations;
    for (const auto& r : results) {
      report.per_scene.push_back(r);
      if (r.converged) ++summary.converged;
      rmses.push_back(r.rmse);
      iterations.push_back(static_cast<double>(r.iterations));
    }
    summary.convergence_rate =
        static_cast<double>(summary.converged) / n_scenes;
    summary.median_rmse = detail::median(std::move(rmses));
    summary.median_iterations = detail::median(std::move(iterations));
    report.levels.push_back(summary);
  }
  return report;
}

}  // namespace boxalign
