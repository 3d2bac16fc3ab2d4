// Command-line harness: box fitting, noise-robustness sweeps, scheduler
// replay, deviation statistics, and gradient verification. All subcommands
// are deterministic for a fixed (seed, config) pair and write their reports
// under --out.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "boxalign/config.hpp"
#include "boxalign/fit.hpp"
#include "boxalign/grad.hpp"
#include "boxalign/htl.hpp"
#include "boxalign/kitti.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitCheckFailed = 3;

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw boxalign::IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw boxalign::IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw boxalign::IoError("cannot create '" + path.parent_path().string() + "'");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw boxalign::IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw boxalign::IoError("write failed for '" + path.string() + "'");
}

Json box_json(const boxalign::Box3D& b) {
  return Json{{"cx", b.cx}, {"cy", b.cy}, {"cz", b.cz}, {"l", b.l},
              {"h", b.h},   {"w", b.w},   {"ry", boxalign::normalize_yaw(b.ry)}};
}

struct GlobalArgs {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;
  std::string out_dir = ".";
};

boxalign::CliConfig load_config(GlobalArgs& args) {
  boxalign::CliConfig cfg;
  if (!args.config_path.empty()) {
    cfg = boxalign::parse_config_json(read_text_file(args.config_path));
  }
  if (args.seed_given) {
    cfg.fit.seed = args.seed;
  } else if (cfg.seed.has_value()) {
    cfg.fit.seed = *cfg.seed;
  }
  return cfg;
}

int cmd_fit(const GlobalArgs& args, const boxalign::CliConfig& cfg) {
  using namespace boxalign;
  const Rng master(cfg.fit.seed);
  Rng scene_rng = master.fork(0);
  const Scene scene = synth_scene(scene_rng, 1, cfg.scene);
  const Box3D& gt = scene.boxes[0];
  Rng init_rng = master.fork(1).fork(0);
  const Box3D init = perturb_box(gt, cfg.fit, init_rng);
  Rect2D rect = scene.rects[0];
  if (cfg.fit.rect_noise_px > 0.0) {
    Rng noise_rng = master.fork(2).fork(0).fork(0);
    rect = perturb_rect(rect, cfg.fit.rect_noise_px, noise_rng);
  }
  const FitResult fit = fit_box(init, gt, scene.intrinsics, rect, cfg.fit);

  Json result;
  result["seed"] = cfg.fit.seed;
  result["gt_box"] = box_json(gt);
  result["init_box"] = box_json(init);
  result["final_box"] = box_json(fit.final_box);
  result["target_rect"] = Json{{"umin", rect.umin}, {"umax", rect.umax},
                               {"vmin", rect.vmin}, {"vmax", rect.vmax}};
  result["initial_loss"] = fit.initial_loss;
  result["final_loss"] = fit.loss_trajectory.empty() ? fit.initial_loss
                                                     : fit.loss_trajectory.back();
  result["corner_rmse"] = fit.corner_rmse;
  result["iterations"] = fit.iterations;
  result["converged"] = fit.converged;
  write_text_file(fs::path(args.out_dir) / "fit_result.json", result.dump(2) + "\n");

  std::string traj = "iteration,loss\n0," + format_double(fit.initial_loss) + "\n";
  for (std::size_t i = 0; i < fit.loss_trajectory.size(); ++i) {
    traj += std::to_string(i + 1) + "," + format_double(fit.loss_trajectory[i]) + "\n";
  }
  write_text_file(fs::path(args.out_dir) / "fit_trajectory.csv", traj);

  std::cout << "fit: rmse " << format_double(fit.corner_rmse) << " m after "
            << fit.iterations << " iterations, "
            << (fit.converged ? "converged" : "not converged") << "\n";
  return kExitOk;
}

int cmd_suite(const GlobalArgs& args, const boxalign::CliConfig& cfg) {
  using namespace boxalign;
  const SuiteReport report =
      run_fit_suite(cfg.fit, cfg.suite_scenes, cfg.noise_levels, cfg.scene);

  std::string levels =
      "noise_px,scenes,converged,convergence_rate,median_rmse,median_iterations\n";
  for (const auto& lv : report.levels) {
    levels += format_double(lv.noise_px) + "," + std::to_string(lv.scenes) + "," +
              std::to_string(lv.converged) + "," +
              format_double(lv.convergence_rate) + "," +
              format_double(lv.median_rmse) + "," +
              format_double(lv.median_iterations) + "\n";
  }
  write_text_file(fs::path(args.out_dir) / "suite_summary.csv", levels);

  std::string scenes = "noise_px,scene,converged,iterations,rmse,final_loss\n";
  for (const auto& sc : report.per_scene) {
    scenes += format_double(sc.noise_px) + "," + std::to_string(sc.scene) + "," +
              (sc.converged ? "1" : "0") + "," + std::to_string(sc.iterations) +
              "," + format_double(sc.rmse) + "," + format_double(sc.final_loss) +
              "\n";
  }
  write_text_file(fs::path(args.out_dir) / "suite_scenes.csv", scenes);

  Json summary;
  summary["seed"] = cfg.fit.seed;
  summary["scenes"] = cfg.suite_scenes;
  summary["levels"] = Json::array();
  for (const auto& lv : report.levels) {
    summary["levels"].push_back(Json{{"noise_px", lv.noise_px},
                                     {"converged", lv.converged},
                                     {"convergence_rate", lv.convergence_rate},
                                     {"median_rmse", lv.median_rmse},
                                     {"median_iterations", lv.median_iterations}});
  }
  write_text_file(fs::path(args.out_dir) / "suite_summary.json",
                  summary.dump(2) + "\n");

  for (const auto& lv : report.levels) {
    std::cout << "suite: noise " << lv.noise_px << " px -> convergence "
              << lv.converged << "/" << lv.scenes << ", median rmse "
              << format_double(lv.median_rmse) << " m\n";
  }
  return kExitOk;
}

int cmd_htl_replay(const GlobalArgs& args, const boxalign::CliConfig& cfg,
                   const std::string& history_path) {
  using namespace boxalign;
  const LossHistory history = parse_loss_history_csv(read_text_file(history_path));
  const TaskGraph graph = cfg.htl_graph.has_value() ? *cfg.htl_graph
                                                    : TaskGraph::standard();
  const std::string trace =
      htl_replay_csv(graph, history, cfg.htl_window, cfg.htl_total_epochs);
  write_text_file(fs::path(args.out_dir) / "htl_weights.csv", trace);
  std::cout << "htl-replay: " << history.by_epoch.size() << " epochs, "
            << graph.nodes().size() << " tasks\n";
  return kExitOk;
}

int cmd_deviation_stats(const GlobalArgs& args, const boxalign::CliConfig& cfg,
                        const std::string& label_dir, const std::string& calib_dir) {
  using namespace boxalign;
  if (!fs::is_directory(label_dir)) {
    throw IoError("label directory '" + label_dir + "' not found");
  }
  if (!fs::is_directory(calib_dir)) {
    throw IoError("calib directory '" + calib_dir + "' not found");
  }
  std::vector<fs::path> label_files;
  for (const auto& entry : fs::directory_iterator(label_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      label_files.push_back(entry.path());
    }
  }
  std::sort(label_files.begin(), label_files.end());

  DeviationAccumulator acc;
  int files_processed = 0;
  int files_skipped = 0;
  for (const auto& label_path : label_files) {
    const fs::path calib_path =
        fs::path(calib_dir) / (label_path.stem().string() + ".txt");
    if (!fs::exists(calib_path)) {
      std::cerr << "warning: no calibration for '" << label_path.filename().string()
                << "', skipping\n";
      ++files_skipped;
      continue;
    }
    CameraIntrinsics k;
    std::vector<LabelRecord> records;
    try {
      k = parse_calib(read_text_file(calib_path));
      records = parse_label_file(read_text_file(label_path));
    } catch (const ParseError& e) {
      throw ParseError(std::string(e.what()) + " in '" + label_path.string() + "'",
                       e.line());
    }
    for (const auto& rec : records) acc.add(rec, k, cfg.deviation);
    ++files_processed;
  }

  const auto stats = acc.finalize();
  std::string csv = "edge,bin_lo,bin_hi,count\n";
  Json summary;
  summary["files_processed"] = files_processed;
  summary["files_skipped"] = files_skipped;
  summary["sample_count"] = 0;
  summary["edges"] = Json::object();
  if (stats.has_value()) {
    csv = deviation_hist_csv(*stats);
    const Json detail = deviation_summary_json(*stats);
    summary["sample_count"] = detail["sample_count"];
    summary["edges"] = detail["edges"];
  } else {
    std::cerr << "warning: no records passed the filters; statistics are empty\n";
  }
  write_text_file(fs::path(args.out_dir) / "deviation_hist.csv", csv);
  write_text_file(fs::path(args.out_dir) / "deviation_summary.json",
                  summary.dump(2) + "\n");
  std::cout << "deviation-stats: " << (stats.has_value() ? stats->sample_count : 0)
            << " objects from " << files_processed << " files (" << files_skipped
            << " skipped)\n";
  return kExitOk;
}

int cmd_grad_check(const GlobalArgs& args, const boxalign::CliConfig& cfg) {
  using namespace boxalign;
  const std::pair<LossId, const char*> losses[] = {
      {LossId::kSpatial, "spatial"},
      {LossId::kProjection, "projection"},
      {LossId::kDepth, "depth"}};
  Json report;
  report["seed"] = cfg.fit.seed;
  report["instances"] = cfg.grad_instances;
  report["eps"] = cfg.grad_eps;
  report["tolerance"] = cfg.grad_tolerance;
  report["losses"] = Json::object();
  bool failed = false;
  const Rng master(cfg.fit.seed);
  for (std::size_t li = 0; li < 3; ++li) {
    const auto [id, name] = losses[li];
    Rng rng = master.fork(100 + li);
    double worst = 0.0;
    int checked = 0;
    for (int i = 0; i < cfg.grad_instances; ++i) {
      const LossInstance instance = random_instance(id, rng);
      const GradReport r = finite_diff_check(id, instance, cfg.grad_eps);
      worst = std::max(worst, r.max_rel_err);
      ++checked;
    }
    const bool ok = worst <= cfg.grad_tolerance;
    failed = failed || !ok;
    report["losses"][name] = Json{{"checked", checked},
                                  {"max_rel_err", worst},
                                  {"pass", ok}};
    std::cout << "grad-check: " << name << " max rel err "
              << format_double(worst) << " over " << checked << " instances -> "
              << (ok ? "ok" : "FAIL") << "\n";
  }
  report["pass"] = !failed;
  write_text_file(fs::path(args.out_dir) / "grad_check.json",
                  report.dump(2) + "\n");
  return failed ? kExitCheckFailed : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric-consistency toolkit for 3D box alignment losses"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs args;
  auto* seed_opt = app.add_option("--seed", args.seed, "Generator seed (default 0)");
  app.add_option("--config", args.config_path, "JSON config file");
  app.add_option("--out", args.out_dir, "Output directory (default .)");

  auto* fit_cmd = app.add_subcommand("fit", "Fit one synthetic scene and dump the trajectory");
  auto* suite_cmd = app.add_subcommand("suite", "Noise-robustness sweep over synthetic scenes");
  auto* replay_cmd = app.add_subcommand("htl-replay", "Replay a loss history through the scheduler");
  std::string history_path;
  replay_cmd->add_option("--history", history_path, "Loss history CSV (epoch,task_id,mean_loss)")
      ->required();
  auto* dev_cmd = app.add_subcommand("deviation-stats", "Projected-corner deviation statistics");
  std::string label_dir, calib_dir;
  dev_cmd->add_option("--labels", label_dir, "Directory of label .txt files")->required();
  dev_cmd->add_option("--calib", calib_dir, "Directory of calibration .txt files")->required();
  auto* grad_cmd = app.add_subcommand("grad-check", "Verify analytic gradients against finite differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  args.seed_given = seed_opt->count() > 0;

  try {
    const boxalign::CliConfig cfg = load_config(args);
    if (fit_cmd->parsed()) return cmd_fit(args, cfg);
    if (suite_cmd->parsed()) return cmd_suite(args, cfg);
    if (replay_cmd->parsed()) return cmd_htl_replay(args, cfg, history_path);
    if (dev_cmd->parsed()) return cmd_deviation_stats(args, cfg, label_dir, calib_dir);
    if (grad_cmd->parsed()) return cmd_grad_check(args, cfg);
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
  } catch (const boxalign::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const boxalign::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const boxalign::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
