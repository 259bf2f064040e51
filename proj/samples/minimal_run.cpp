// Simulate a figure-eight, run the estimator on it and report the error.
//
//   minimal_run [seed] [noise: 0|1] [zupt: 0|1]

#include <cstdio>
#include <cstdlib>

#include "pivo/pivo.hpp"

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  const bool noisy = argc > 2 ? std::atoi(argv[2]) != 0 : true;
  const bool zupt = argc > 3 ? std::atoi(argv[3]) != 0 : true;

  pivo::ScenarioSpec spec = noisy ? pivo::realistic_figure_eight(seed) : pivo::ScenarioSpec{};
  spec.seed = seed;
  const pivo::Simulation sim = pivo::synthesize(spec);

  pivo::EstimatorConfig cfg;
  if (noisy) {
    cfg.noise.sigma_a = pivo::Vec3::Constant(spec.accel_sigma);
    cfg.noise.sigma_w = pivo::Vec3::Constant(spec.gyro_sigma);
    cfg.visual.sigma_uv = spec.pixel_sigma;
  }
  cfg.zupt = zupt;
  pivo::Estimator est(spec.camera, cfg);
  est.run(sim.imu, sim.frames);

  const auto truth = sim.truth_poses();
  const pivo::AteResult ate = pivo::evaluate_trajectory(est.trajectory().poses, truth, pivo::AlignMode::Rigid3d);
  const auto& s = est.summary();
  std::printf("frames %zu  proposed %zu  applied %zu  gated %zu  invalid %zu  zupt %zu\n", s.frames,
              s.tracks_proposed, s.updates_applied, s.gate_rejections, s.invalid_proposals, s.zupt_updates);
  std::printf("final position error %.6f m\n", (est.state().position() - truth.back().p).norm());
  std::printf("ATE rmse %.4f m  median %.4f m  path %.2f m (%.3f%%)\n", ate.rmse, ate.median,
              pivo::path_length(truth), 100.0 * ate.rmse / pivo::path_length(truth));
  return 0;
}
