#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "boxalign/errors.hpp"
#include "boxalign/io_util.hpp"

namespace boxalign {

/// One scheduled loss stream: its stage in the four-stage hierarchy, the
/// prerequisite streams whose learning status gates it, and its base weight.
struct TaskNode {
  std::string id;
  int stage = 1;  // 1..4
  std::vector<std::string> pre_tasks;
  double base_weight = 1.0;
};

/// Validated task DAG. Every prerequisite must live in a strictly earlier
/// stage, which also guarantees acyclicity.
class TaskGraph {
 public:
  explicit TaskGraph(std::vector<TaskNode> nodes) : nodes_(std::move(nodes)) {
    std::set<std::string> ids;
    for (const auto& n : nodes_) {
      if (n.id.empty()) throw ConfigError("task graph: empty task id");
      if (!ids.insert(n.id).second) {
        throw ConfigError("task graph: duplicate task id '" + n.id + "'");
      }
      if (n.stage < 1 || n.stage > 4) {
        throw ConfigError("task graph: task '" + n.id + "' has stage outside 1..4");
      }
      if (!std::isfinite(n.base_weight)) {
        throw ConfigError("task graph: task '" + n.id + "' has non-finite weight");
      }
    }
    for (const auto& n : nodes_) {
      for (const auto& pre : n.pre_tasks) {
        const TaskNode* p = find(pre);
        if (p == nullptr) {
          throw ConfigError("task graph: task '" + n.id + "' references unknown pre-task '" + pre + "'");
        }
        if (p->stage >= n.stage) {
          throw ConfigError("task graph: pre-task '" + pre + "' of '" + n.id +
                            "' must belong to a strictly earlier stage");
        }
      }
    }
  }

  /// Default wiring: one stream per weighted loss term. The 2D streams are
  /// unconditioned; the 3D attribute streams wait on the 2D ones; depth
  /// additionally waits on the 3D attributes; the two alignment streams wait
  /// on all 3D attribute streams. The image-level dmap/region streams are
  /// unconditioned stage-1 tasks.
  static TaskGraph standard() {
    const std::vector<std::string> stage1 = {"class", "dim2d", "center2d", "giou2d"};
    std::vector<std::string> stage12 = stage1;
    stage12.insert(stage12.end(), {"dim3d", "angle"});
    return TaskGraph({
        {"class", 1, {}, 2.0},
        {"dim2d", 1, {}, 5.0},
        {"center2d", 1, {}, 2.0},
        {"giou2d", 1, {}, 10.0},
        {"dmap", 1, {}, 1.0},
        {"region", 1, {}, 1.0},
        {"dim3d", 2, stage1, 1.0},
        {"angle", 2, stage1, 1.0},
        {"depth", 3, stage12, 1.0},
        {"corner", 4, {"dim3d", "angle", "depth"}, 1.0},
        {"proj", 4, {"dim3d", "angle", "depth"}, 1.0},
    });
  }

  const std::vector<TaskNode>& nodes() const { return nodes_; }

  const TaskNode* find(std::string_view id) const {
    for (const auto& n : nodes_) {
      if (n.id == id) return &n;
    }
    return nullptr;
  }

 private:
  std::vector<TaskNode> nodes_;
};

/// Mean absolute first difference of the epoch-mean losses over the window
/// of k differences ending at epoch t-1 (epochs 0-based, t = number of
/// recorded epochs). Returns nullopt until enough history exists (t >= k+1).
inline std::optional<double> loss_trend(std::span<const double> history, int t,
                                        int k) {
  if (k < 1) throw std::invalid_argument("loss_trend: window must be >= 1");
  if (t < k + 1 || static_cast<std::size_t>(t) > history.size()) {
    return std::nullopt;
  }
  double acc = 0.0;
  for (int i = t - k; i <= t - 1; ++i) {
    acc += std::abs(history[i] - history[i - 1]);
  }
  return acc / k;
}

/// Clamped relative decrease of the loss trend against the first-window
/// trend: 1 = fully stabilized, 0 = no progress. A task that was flat from
/// the start (df_first == 0) counts as converged.
inline double learning_status(double df_first, double df_t) {
  if (!(df_first >= 0.0) || !(df_t >= 0.0) || !std::isfinite(df_first) ||
      !std::isfinite(df_t)) {
    throw std::invalid_argument("learning_status: trends must be non-negative");
  }
  if (df_first == 0.0) return 1.0;
  return std::clamp((df_first - df_t) / df_first, 0.0, 1.0);
}

/// Geometric mean of the prerequisite learning statuses.
inline double geometric_mean_alpha(std::span<const double> statuses) {
  if (statuses.empty()) {
    throw std::invalid_argument("geometric_mean_alpha: needs at least one status");
  }
  double prod = 1.0;
  for (double s : statuses) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw std::invalid_argument("geometric_mean_alpha: statuses must be in [0, 1]");
    }
    prod *= s;
  }
  if (prod == 0.0) return 0.0;
  return std::pow(prod, 1.0 / static_cast<double>(statuses.size()));
}

/// Diagnostic gradient of the geometric-mean alpha with respect to each
/// status: alpha / (n * l_k), evaluated in the numerically stable product
/// form. Divergent entries (l_k = 0, others positive, n >= 2) are +inf;
/// indeterminate entries (two zeros) are NaN. Not used in optimization.
inline std::vector<double> alpha_gradient(std::span<const double> statuses) {
  const std::size_t n = statuses.size();
  if (n == 0) {
    throw std::invalid_argument("alpha_gradient: needs at least one status");
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double prod_except = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != k) prod_except *= statuses[j];
    }
    const double num = std::pow(prod_except, 1.0 / static_cast<double>(n));
    const double den = static_cast<double>(n) *
                       std::pow(statuses[k], 1.0 - 1.0 / static_cast<double>(n));
    if (den == 0.0) {
      out[k] = num == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                          : std::numeric_limits<double>::infinity();
    } else {
      out[k] = num / den;
    }
  }
  return out;
}

/// Polynomial time schedule (t / total)^(1 - alpha). omega(total, a) = 1 for
/// any a; omega(t, 1) = 1 including t = 0; omega(t, 0) = t / total.
inline double omega_weight(int t, int total_epochs, double alpha) {
  if (total_epochs < 1) {
    throw std::invalid_argument("omega_weight: total_epochs must be >= 1");
  }
  if (t < 0 || t > total_epochs) {
    throw std::invalid_argument("omega_weight: epoch out of range");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("omega_weight: alpha must be in [0, 1]");
  }
  if (t == total_epochs) return 1.0;
  if (alpha == 1.0) return 1.0;
  if (t == 0) return 0.0;
  return std::pow(static_cast<double>(t) / total_epochs, 1.0 - alpha);
}

/// Scheduler snapshot for one epoch.
struct EpochWeights {
  int epoch = 0;  // 1-based count of recorded epochs
  std::map<std::string, double> status;
  std::map<std::string, double> alpha;
  std::map<std::string, double> omega;
};

/// Epoch-wise weight scheduler over a task DAG. Single-owner mutable: one
/// training (or replay) loop owns it and feeds epochs in order. Statuses of
/// tasks without enough history default to 0, so dependent tasks ramp as
/// t / total_epochs until the first window completes.
class Scheduler {
 public:
  Scheduler(TaskGraph graph, int total_epochs, int window = 5)
      : graph_(std::move(graph)), total_epochs_(total_epochs), window_(window) {
    if (total_epochs_ < 1) throw ConfigError("scheduler: total_epochs must be >= 1");
    if (window_ < 1) throw ConfigError("scheduler: window must be >= 1");
    for (const auto& n : graph_.nodes()) history_[n.id] = {};
  }

  /// Records one epoch of per-task mean losses and returns the weight map
  /// for that epoch. Every task in the graph must be present, and no extras.
  EpochWeights step_epoch(const std::map<std::string, double>& epoch_losses) {
    if (epoch_ + 1 > total_epochs_) {
      throw std::invalid_argument("scheduler: epoch count exceeds total_epochs");
    }
    for (const auto& [id, value] : epoch_losses) {
      if (graph_.find(id) == nullptr) {
        throw ConfigError("scheduler: unknown task '" + id + "'");
      }
      if (!std::isfinite(value)) {
        throw std::invalid_argument("scheduler: non-finite loss for task '" + id + "'");
      }
    }
    for (const auto& n : graph_.nodes()) {
      const auto it = epoch_losses.find(n.id);
      if (it == epoch_losses.end()) {
        throw ConfigError("scheduler: epoch losses missing task '" + n.id + "'");
      }
      history_[n.id].push_back(it->second);
    }
    ++epoch_;

    EpochWeights out;
    out.epoch = epoch_;
    for (const auto& n : graph_.nodes()) {
      const auto trend = loss_trend(history_[n.id], epoch_, window_);
      double status = 0.0;
      if (trend.has_value()) {
        const auto first = df_first_.try_emplace(n.id, *trend).first;
        status = learning_status(first->second, *trend);
      }
      out.status[n.id] = status;
    }
    for (const auto& n : graph_.nodes()) {
      double alpha = 1.0;  // unconditioned tasks get full weight
      if (!n.pre_tasks.empty()) {
        std::vector<double> pre_statuses;
        pre_statuses.reserve(n.pre_tasks.size());
        for (const auto& pre : n.pre_tasks) pre_statuses.push_back(out.status.at(pre));
        alpha = geometric_mean_alpha(pre_statuses);
      }
      out.alpha[n.id] = alpha;
      out.omega[n.id] = omega_weight(epoch_, total_epochs_, alpha);
    }
    return out;
  }

  int epoch() const { return epoch_; }
  int total_epochs() const { return total_epochs_; }
  int window() const { return window_; }
  const TaskGraph& graph() const { return graph_; }

  const std::vector<double>& history(const std::string& id) const {
    const auto it = history_.find(id);
    if (it == history_.end()) throw ConfigError("scheduler: unknown task '" + id + "'");
    return it->second;
  }

  /// Cached first-window trend (the fixed normalizer), once available.
  std::optional<double> first_window_trend(const std::string& id) const {
    const auto it = df_first_.find(id);
    if (it == df_first_.end()) return std::nullopt;
    return it->second;
  }

 private:
  TaskGraph graph_;
  int total_epochs_;
  int window_;
  int epoch_ = 0;
  std::map<std::string, std::vector<double>> history_;
  std::map<std::string, double> df_first_;
};

/// Loss history table: epoch id -> task id -> mean loss.
struct LossHistory {
  std::map<int, std::map<std::string, double>> by_epoch;
};

inline constexpr std::string_view kLossHistoryHeader = "epoch,task_id,mean_loss";

/// Parses "epoch,task_id,mean_loss" CSV (header required).
inline LossHistory parse_loss_history_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != kLossHistoryHeader) {
    throw ParseError("loss history: expected header '" +
                         std::string(kLossHistoryHeader) + "'", 1);
  }
  LossHistory out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 3) {
      throw ParseError("loss history: expected 3 fields", i + 1);
    }
    const auto epoch = try_parse_int(trim(fields[0]));
    const auto value = try_parse_double(trim(fields[2]));
    const std::string task(trim(fields[1]));
    if (!epoch.has_value() || !value.has_value() || task.empty()) {
      throw ParseError("loss history: unparsable row", i + 1);
    }
    auto& epoch_map = out.by_epoch[static_cast<int>(*epoch)];
    if (!epoch_map.emplace(task, *value).second) {
      throw ParseError("loss history: duplicate entry for task '" + task + "'", i + 1);
    }
  }
  return out;
}

inline std::string write_loss_history_csv(const LossHistory& history) {
  std::string out{kLossHistoryHeader};
  out += '\n';
  for (const auto& [epoch, tasks] : history.by_epoch) {
    for (const auto& [task, value] : tasks) {
      out += std::to_string(epoch) + "," + task + "," + format_double(value) + "\n";
    }
  }
  return out;
}

/// Replays a recorded loss history through the scheduler and emits one
/// "(epoch, task, l_s, alpha, omega)" row per task per epoch, tasks in graph
/// order. Epoch ids are echoed from the input; scheduling uses their rank
/// order. total_epochs defaults to the number of epochs in the history, so
/// the final epoch always carries omega = 1.
inline std::string htl_replay_csv(const TaskGraph& graph,
                                  const LossHistory& history, int window = 5,
                                  std::optional<int> total_epochs = std::nullopt) {
  if (history.by_epoch.empty()) {
    throw ConfigError("htl replay: empty loss history");
  }
  const int epochs = total_epochs.value_or(static_cast<int>(history.by_epoch.size()));
  Scheduler scheduler(graph, epochs, window);
  std::string out = "epoch,task,l_s,alpha,omega\n";
  for (const auto& [epoch_id, losses] : history.by_epoch) {
    const EpochWeights w = scheduler.step_epoch(losses);
    for (const auto& n : graph.nodes()) {
      out += std::to_string(epoch_id) + "," + n.id + "," +
             format_double(w.status.at(n.id)) + "," +
             format_double(w.alpha.at(n.id)) + "," +
             format_double(w.omega.at(n.id)) + "\n";
    }
  }
  return out;
}

}  // namespace boxalign
