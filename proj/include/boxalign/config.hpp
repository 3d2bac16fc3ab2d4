#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxalign/fit.hpp"
#include "boxalign/htl.hpp"
#include "boxalign/kitti.hpp"

namespace boxalign {

/// Everything the CLI can be configured with. Field-for-field JSON schema,
/// all keys optional, unknown keys rejected (see README for the layout).
struct CliConfig {
  std::optional<std::uint64_t> seed;  // overridden by --seed when given
  FitConfig fit;
  int suite_scenes = 100;
  std::vector<double> noise_levels{kNoiseLevelsPx.begin(), kNoiseLevelsPx.end()};
  int htl_window = 5;
  std::optional<int> htl_total_epochs;
  std::optional<TaskGraph> htl_graph;  // standard() when absent
  DeviationFilters deviation;
  SceneRanges scene;
  int grad_instances = 100;
  double grad_eps = 1e-5;
  double grad_tolerance = 1e-5;
};

namespace detail {

using Json = nlohmann::json;

inline void require_keys(const Json& obj, const std::set<std::string>& allowed,
                         const std::string& scope) {
  if (!obj.is_object()) {
    throw ConfigError("config: '" + scope + "' must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("config: unknown key '" +
                        (scope.empty() ? key : scope + "." + key) + "'");
    }
  }
}

inline double get_number(const Json& obj, const std::string& key, double fallback,
                         const std::string& scope) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) {
    throw ConfigError("config: '" + scope + "." + key + "' must be a number");
  }
  return obj[key].get<double>();
}

inline int get_int(const Json& obj, const std::string& key, int fallback,
                   const std::string& scope) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) {
    throw ConfigError("config: '" + scope + "." + key + "' must be an integer");
  }
  return obj[key].get<int>();
}

inline void parse_range_pair(const Json& obj, const std::string& key,
                             double& lo, double& hi, const std::string& scope) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError("config: '" + scope + "." + key + "' must be [lo, hi]");
  }
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

inline TaskGraph parse_task_graph(const Json& arr) {
  if (!arr.is_array() || arr.empty()) {
    throw ConfigError("config: 'htl.tasks' must be a non-empty array");
  }
  std::vector<TaskNode> nodes;
  for (const auto& item : arr) {
    require_keys(item, {"id", "stage", "base_weight", "pre_tasks"}, "htl.tasks[]");
    if (!item.contains("id") || !item["id"].is_string()) {
      throw ConfigError("config: task entry needs a string 'id'");
    }
    TaskNode node;
    node.id = item["id"].get<std::string>();
    node.stage = get_int(item, "stage", 1, "htl.tasks[]");
    node.base_weight = get_number(item, "base_weight", 1.0, "htl.tasks[]");
    if (item.contains("pre_tasks")) {
      if (!item["pre_tasks"].is_array()) {
        throw ConfigError("config: 'pre_tasks' must be an array of task ids");
      }
      for (const auto& pre : item["pre_tasks"]) {
        if (!pre.is_string()) {
          throw ConfigError("config: 'pre_tasks' must be an array of task ids");
        }
        node.pre_tasks.push_back(pre.get<std::string>());
      }
    }
    nodes.push_back(std::move(node));
  }
  return TaskGraph(std::move(nodes));
}

}  // namespace detail

inline CliConfig parse_config_json(const std::string& text) {
  detail::Json root;
  try {
    root = detail::Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  detail::require_keys(root, {"seed", "fit", "suite", "htl", "deviation",
                              "scene", "grad_check"},
                       "");
  CliConfig cfg;

  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned()) {
      throw ConfigError("config: 'seed' must be a non-negative integer");
    }
    cfg.seed = root["seed"].get<std::uint64_t>();
  }

  if (root.contains("fit")) {
    const auto& fit = root["fit"];
    detail::require_keys(fit,
                         {"lambda_corner", "lambda_proj", "axis_source",
                          "step_size", "max_iterations", "rmse_threshold",
                          "init_center_jitter", "init_dims_jitter",
                          "init_yaw_jitter", "rect_noise_px"},
                         "fit");
    if (fit.contains("axis_source")) {
      if (!fit["axis_source"].is_string()) {
        throw ConfigError("config: 'fit.axis_source' must be a string");
      }
      const std::string source = fit["axis_source"].get<std::string>();
      if (source == "pred") {
        cfg.fit.axis_source = AxisSource::kPred;
      } else if (source == "gt") {
        cfg.fit.axis_source = AxisSource::kGt;
      } else if (source == "union") {
        cfg.fit.axis_source = AxisSource::kUnion;
      } else {
        throw ConfigError("config: 'fit.axis_source' must be pred, gt, or union");
      }
    }
    cfg.fit.lambda_corner = detail::get_number(fit, "lambda_corner", cfg.fit.lambda_corner, "fit");
    cfg.fit.lambda_proj = detail::get_number(fit, "lambda_proj", cfg.fit.lambda_proj, "fit");
    cfg.fit.step_size = detail::get_number(fit, "step_size", cfg.fit.step_size, "fit");
    cfg.fit.max_iterations = detail::get_int(fit, "max_iterations", cfg.fit.max_iterations, "fit");
    cfg.fit.rmse_threshold = detail::get_number(fit, "rmse_threshold", cfg.fit.rmse_threshold, "fit");
    cfg.fit.init_center_jitter = detail::get_number(fit, "init_center_jitter", cfg.fit.init_center_jitter, "fit");
    cfg.fit.init_dims_jitter = detail::get_number(fit, "init_dims_jitter", cfg.fit.init_dims_jitter, "fit");
    cfg.fit.init_yaw_jitter = detail::get_number(fit, "init_yaw_jitter", cfg.fit.init_yaw_jitter, "fit");
    cfg.fit.rect_noise_px = detail::get_number(fit, "rect_noise_px", cfg.fit.rect_noise_px, "fit");
    validate_config(cfg.fit);
  }

  if (root.contains("suite")) {
    const auto& suite = root["suite"];
    detail::require_keys(suite, {"scenes", "noise_levels"}, "suite");
    cfg.suite_scenes = detail::get_int(suite, "scenes", cfg.suite_scenes, "suite");
    if (cfg.suite_scenes < 1) throw ConfigError("config: 'suite.scenes' must be >= 1");
    if (suite.contains("noise_levels")) {
      if (!suite["noise_levels"].is_array() || suite["noise_levels"].empty()) {
        throw ConfigError("config: 'suite.noise_levels' must be a non-empty array");
      }
      cfg.noise_levels.clear();
      for (const auto& v : suite["noise_levels"]) {
        if (!v.is_number() || v.get<double>() < 0.0) {
          throw ConfigError("config: 'suite.noise_levels' entries must be >= 0");
        }
        cfg.noise_levels.push_back(v.get<double>());
      }
    }
  }

  if (root.contains("htl")) {
    const auto& htl = root["htl"];
    detail::require_keys(htl, {"window", "total_epochs", "tasks"}, "htl");
    cfg.htl_window = detail::get_int(htl, "window", cfg.htl_window, "htl");
    if (cfg.htl_window < 1) throw ConfigError("config: 'htl.window' must be >= 1");
    if (htl.contains("total_epochs") && !htl["total_epochs"].is_null()) {
      cfg.htl_total_epochs = detail::get_int(htl, "total_epochs", 0, "htl");
      if (*cfg.htl_total_epochs < 1) {
        throw ConfigError("config: 'htl.total_epochs' must be >= 1");
      }
    }
    if (htl.contains("tasks")) {
      cfg.htl_graph = detail::parse_task_graph(htl["tasks"]);
    }
  }

  if (root.contains("deviation")) {
    const auto& dev = root["deviation"];
    detail::require_keys(dev, {"max_truncation", "max_occlusion"}, "deviation");
    cfg.deviation.max_truncation =
        detail::get_number(dev, "max_truncation", cfg.deviation.max_truncation, "deviation");
    cfg.deviation.max_occlusion =
        detail::get_int(dev, "max_occlusion", cfg.deviation.max_occlusion, "deviation");
  }

  if (root.contains("scene")) {
    const auto& sc = root["scene"];
    detail::require_keys(sc, {"z", "lateral_frac", "y", "length", "height",
                              "width", "intrinsics"},
                         "scene");
    detail::parse_range_pair(sc, "z", cfg.scene.z_lo, cfg.scene.z_hi, "scene");
    cfg.scene.lateral_frac =
        detail::get_number(sc, "lateral_frac", cfg.scene.lateral_frac, "scene");
    detail::parse_range_pair(sc, "y", cfg.scene.y_lo, cfg.scene.y_hi, "scene");
    detail::parse_range_pair(sc, "length", cfg.scene.len_lo, cfg.scene.len_hi, "scene");
    detail::parse_range_pair(sc, "height", cfg.scene.height_lo, cfg.scene.height_hi, "scene");
    detail::parse_range_pair(sc, "width", cfg.scene.width_lo, cfg.scene.width_hi, "scene");
    if (sc.contains("intrinsics")) {
      const auto& k = sc["intrinsics"];
      detail::require_keys(k, {"fu", "fv", "cu", "cv"}, "scene.intrinsics");
      cfg.scene.intrinsics.fu = detail::get_number(k, "fu", cfg.scene.intrinsics.fu, "scene.intrinsics");
      cfg.scene.intrinsics.fv = detail::get_number(k, "fv", cfg.scene.intrinsics.fv, "scene.intrinsics");
      cfg.scene.intrinsics.cu = detail::get_number(k, "cu", cfg.scene.intrinsics.cu, "scene.intrinsics");
      cfg.scene.intrinsics.cv = detail::get_number(k, "cv", cfg.scene.intrinsics.cv, "scene.intrinsics");
    }
    validate_ranges(cfg.scene);
  }

  if (root.contains("grad_check")) {
    const auto& gc = root["grad_check"];
    detail::require_keys(gc, {"instances", "eps", "tolerance"}, "grad_check");
    cfg.grad_instances = detail::get_int(gc, "instances", cfg.grad_instances, "grad_check");
    cfg.grad_eps = detail::get_number(gc, "eps", cfg.grad_eps, "grad_check");
    cfg.grad_tolerance = detail::get_number(gc, "tolerance", cfg.grad_tolerance, "grad_check");
    if (cfg.grad_instances < 1) throw ConfigError("config: 'grad_check.instances' must be >= 1");
    if (!(cfg.grad_eps > 0.0)) throw ConfigError("config: 'grad_check.eps' must be positive");
    if (!(cfg.grad_tolerance > 0.0)) throw ConfigError("config: 'grad_check.tolerance' must be positive");
  }

  return cfg;
}

}  // namespace boxalign
