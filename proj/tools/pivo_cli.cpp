// pivo command-line front end: run, simulate, evaluate, compare-updates.
//
// Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pivo/pivo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

int exit_code_for(pivo::ErrorKind kind) {
  switch (kind) {
    case pivo::ErrorKind::Config:
      return kConfig;
    case pivo::ErrorKind::NumericalFailure:
      return kNumerical;
    default:
      return kData;
  }
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pivo");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PIVO_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) {
    throw pivo::Error(pivo::ErrorKind::Config, std::string(what) + " file not found: '" + path + "'");
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw pivo::Error(pivo::ErrorKind::InvalidInput, "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

json state_dump(const pivo::FilterState& s, double t) {
  json j;
  j["t"] = t;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  std::vector<std::vector<double>> cov;
  for (int r = 0; r < s.cov.rows(); ++r) {
    std::vector<double> row(s.cov.cols());
    for (int c = 0; c < s.cov.cols(); ++c) row[c] = s.cov(r, c);
    cov.push_back(std::move(row));
  }
  j["cov"] = cov;
  return j;
}

struct RunOptions {
  std::string imu, tracks, calib, out, summary;
  std::optional<int> n_a;
  std::optional<double> sigma_uv, gate;
  std::uint64_t seed = 0;
  std::string zupt = "on";
  double max_speed = 0.0;
};

int cmd_run(const RunOptions& o) {
  require_file(o.calib, "calibration");
  require_file(o.imu, "IMU");
  require_file(o.tracks, "track");
  pivo::CalibrationConfig calib = pivo::load_calibration(o.calib);
  pivo::EstimatorConfig cfg;
  cfg.noise = calib.noise;
  cfg.augmentation = calib.augmentation;
  cfg.visual = calib.visual;
  if (o.n_a) cfg.augmentation.n_a = *o.n_a;
  if (o.sigma_uv) cfg.visual.sigma_uv = *o.sigma_uv;
  if (o.gate) cfg.visual.gate_confidence = *o.gate;
  cfg.zupt = o.zupt == "on";
  cfg.max_speed = o.max_speed;
  if (cfg.augmentation.n_a < 2) throw pivo::Error(pivo::ErrorKind::Config, "--na must be at least 2");
  if (!(cfg.visual.sigma_uv > 0.0)) throw pivo::Error(pivo::ErrorKind::Config, "--sigma-uv must be positive");
  if (!(cfg.visual.gate_confidence > 0.0 && cfg.visual.gate_confidence < 1.0)) {
    throw pivo::Error(pivo::ErrorKind::Config, "--gate must lie in (0, 1)");
  }

  pivo::ImuLoadStats stats;
  const auto imu = pivo::load_euroc_imu(o.imu, &stats);
  if (stats.duplicates_dropped) spdlog::warn("dropped {} duplicate IMU timestamps", stats.duplicates_dropped);
  if (stats.reordered) spdlog::warn("reordered {} IMU rows", stats.reordered);
  const auto frames = pivo::load_tracks(o.tracks);
  spdlog::info("loaded {} IMU samples and {} frames", imu.size(), frames.size());

  pivo::Estimator est(calib.camera, cfg);
  try {
    est.run(imu, frames);
  } catch (const pivo::Error& e) {
    if (e.kind() == pivo::ErrorKind::NumericalFailure) {
      const std::string dump = o.out + ".state_dump.json";
      write_json(dump, state_dump(est.state(), est.time()));
      spdlog::error("state written to {}", dump);
    }
    throw;
  }
  pivo::write_trajectory(o.out, est.trajectory().poses);
  const std::string summary_path = o.summary.empty() ? o.out + ".summary.json" : o.summary;
  json summary = est.summary().to_json();
  summary["n_a"] = cfg.augmentation.n_a;
  summary["zupt"] = cfg.zupt;
  write_json(summary_path, summary);
  const auto& s = est.summary();
  spdlog::info("{} frames, {} tracks proposed, {} updates, {} gated out, {} ZUPTs", s.frames, s.tracks_proposed,
               s.updates_applied, s.gate_rejections, s.zupt_updates);
  spdlog::info("trajectory written to {}", o.out);
  return kOk;
}

struct SimOptions {
  std::string out;
  std::uint64_t seed = 1;
  std::string kind = "figure-eight";
  std::string noise = "realistic";
  double duration = 60.0;
  std::vector<double> occlusion;
};

int cmd_simulate(const SimOptions& o) {
  pivo::ScenarioSpec spec = o.noise == "realistic" ? pivo::realistic_figure_eight(o.seed) : pivo::ScenarioSpec{};
  if (o.noise != "realistic" && o.noise != "none") {
    throw pivo::Error(pivo::ErrorKind::Config, "--noise must be 'realistic' or 'none'");
  }
  spec.seed = o.seed;
  spec.kind = pivo::trajectory_kind_from_string(o.kind);
  spec.duration = o.duration;
  if (spec.kind == pivo::TrajectoryKind::PiecewiseSpline) {
    spec.waypoints = {pivo::Vec3(0, 0, 0), pivo::Vec3(1, 2, 0), pivo::Vec3(0, 4, 0.3), pivo::Vec3(-1, 2, 0),
                      pivo::Vec3(0, 0, 0), pivo::Vec3(1, -2, -0.2), pivo::Vec3(0, -4, 0), pivo::Vec3(0, 0, 0)};
    spec.segment_time = spec.duration / static_cast<double>(spec.waypoints.size() - 1);
  }
  if (o.occlusion.size() % 2) throw pivo::Error(pivo::ErrorKind::Config, "--occlusion takes start,end pairs");
  for (std::size_t i = 0; i < o.occlusion.size(); i += 2) spec.occlusions.emplace_back(o.occlusion[i], o.occlusion[i + 1]);

  const pivo::Simulation sim = pivo::synthesize(spec);
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  pivo::write_euroc_imu((dir / "imu.csv").string(), sim.imu);
  pivo::write_tracks((dir / "tracks.jsonl").string(), sim.frames);
  pivo::write_trajectory((dir / "groundtruth.txt").string(), sim.truth_poses());
  pivo::CalibrationConfig calib;
  calib.camera = spec.camera;
  if (spec.accel_sigma > 0.0) calib.noise.sigma_a = pivo::Vec3::Constant(spec.accel_sigma);
  if (spec.gyro_sigma > 0.0) calib.noise.sigma_w = pivo::Vec3::Constant(spec.gyro_sigma);
  if (spec.pixel_sigma > 0.0) calib.visual.sigma_uv = spec.pixel_sigma;
  pivo::write_calibration((dir / "calib.txt").string(), calib);
  spdlog::info("wrote {} IMU samples, {} frames, {} landmarks to {}", sim.imu.size(), sim.frames.size(),
               sim.landmarks.size(), o.out);
  return kOk;
}

struct EvalOptions {
  std::string est, ref, mode = "rigid3d", out, csv;
};

int cmd_evaluate(const EvalOptions& o) {
  require_file(o.est, "estimate");
  require_file(o.ref, "reference");
  const pivo::AlignMode mode = pivo::align_mode_from_string(o.mode);
  const auto est = pivo::load_trajectory(o.est);
  const auto ref = pivo::load_trajectory(o.ref);
  const pivo::AteResult r = pivo::evaluate_trajectory(est, ref, mode);
  const json report = pivo::ate_report(r);
  if (!o.out.empty()) write_json(o.out, report);
  if (!o.csv.empty()) pivo::write_error_csv(o.csv, r);
  std::cout << report.dump() << "\n";
  return kOk;
}

struct CompareOptions {
  std::uint64_t seed = 3;
  int n_mc = 100000;
  double scale = 1.0;
  std::string out;
};

int cmd_compare(const CompareOptions& o) {
  pivo::McScenario s = pivo::default_mc_scenario(o.scale);
  s.seed = o.seed;
  const pivo::UpdateComparison c = pivo::compare_update_models(s, o.n_mc);
  json j;
  j["kl_mc_pivo"] = c.kl_full;
  j["kl_mc_msckf"] = c.kl_fixed_point;
  j["samples_used"] = c.samples_used;
  j["samples_failed"] = c.samples_failed;
  for (const auto& e : c.ellipses) {
    auto ell = [](const pivo::Ellipse2& x) {
      return json{{"center", {x.center.x(), x.center.y()}},
                  {"angle_deg", x.angle_deg},
                  {"major", x.major},
                  {"minor", x.minor}};
    };
    j["ellipses"].push_back({{"mc", ell(e.mc)}, {"pivo", ell(e.full)}, {"msckf", ell(e.fixed_point)}});
  }
  if (!o.out.empty()) write_json(o.out, j);
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Probabilistic inertial-visual odometry"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Estimate a trajectory from IMU and feature tracks");
  run_cmd->add_option("--imu", run.imu, "EuRoC-format IMU CSV")->required();
  run_cmd->add_option("--tracks", run.tracks, "JSON-lines track file")->required();
  run_cmd->add_option("--calib", run.calib, "Calibration key-value file")->required();
  run_cmd->add_option("--out", run.out, "Output TUM trajectory")->required();
  run_cmd->add_option("--summary", run.summary, "Run summary JSON (default <out>.summary.json)");
  run_cmd->add_option("--na", run.n_a, "Pose trail length");
  run_cmd->add_option("--sigma-uv", run.sigma_uv, "Pixel noise std (px)");
  run_cmd->add_option("--gate", run.gate, "Chi-square gate confidence");
  run_cmd->add_option("--seed", run.seed, "Seed (accepted for symmetry; the run is deterministic)");
  run_cmd->add_option("--zupt", run.zupt, "Zero-velocity updates")->check(CLI::IsMember({"on", "off"}));
  run_cmd->add_option("--max-speed", run.max_speed, "Soft speed prior in m/s (0 = off)");

  SimOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic scenario");
  sim_cmd->add_option("--out", sim.out, "Output directory")->required();
  sim_cmd->add_option("--seed", sim.seed, "RNG seed");
  sim_cmd->add_option("--kind", sim.kind, "stationary|line|circle|figure-eight|spline");
  sim_cmd->add_option("--noise", sim.noise, "realistic|none");
  sim_cmd->add_option("--duration", sim.duration, "Seconds");
  sim_cmd->add_option("--occlusion", sim.occlusion, "Blackout window start,end (repeatable)")->delimiter(',');

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Align and score a trajectory");
  ev_cmd->add_option("--est", ev.est, "Estimated TUM trajectory")->required();
  ev_cmd->add_option("--ref", ev.ref, "Reference TUM trajectory")->required();
  ev_cmd->add_option("--mode", ev.mode, "rigid3d|rigid2d")->check(CLI::IsMember({"rigid3d", "rigid2d"}));
  ev_cmd->add_option("--out", ev.out, "Metrics JSON");
  ev_cmd->add_option("--csv", ev.csv, "Per-pose error CSV");

  CompareOptions cmp;
  auto* cmp_cmd = app.add_subcommand("compare-updates", "Monte Carlo check of the update linearizations");
  cmp_cmd->add_option("--seed", cmp.seed, "RNG seed");
  cmp_cmd->add_option("--n-mc", cmp.n_mc, "Monte Carlo samples");
  cmp_cmd->add_option("--scale", cmp.scale, "Pose uncertainty scale");
  cmp_cmd->add_option("--out", cmp.out, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*ev_cmd) return cmd_evaluate(ev);
    if (*cmp_cmd) return cmd_compare(cmp);
  } catch (const pivo::Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kData;
  }
  return kOk;
}
