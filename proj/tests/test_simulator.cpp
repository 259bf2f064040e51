#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace pivo {
namespace {

ScenarioSpec quiet(TrajectoryKind kind, double duration) {
  ScenarioSpec s;
  s.kind = kind;
  s.duration = duration;
  s.landmark_count = 60;
  return s;
}

NavVector truth_nav(const GroundTruthSample& g) {
  NavVector x = NavVector::Zero();
  x.segment<3>(layout::kPos) = g.p;
  x.segment<4>(layout::kQuat) = g.q;
  x.segment<3>(layout::kVel) = g.v;
  x.segment<3>(layout::kAccScale) = Vec3::Ones();
  return x;
}

double dead_reckoning_error(const Simulation& sim, const Vec3& g) {
  NavVector x = truth_nav(sim.truth[0]);
  double worst = 0.0;
  for (std::size_t k = 1; k < sim.imu.size(); ++k) {
    x = nav_step(x, sim.imu[k], sim.imu[k].t - sim.imu[k - 1].t, g);
    worst = std::max(worst, (x.segment<3>(layout::kPos) - sim.truth[k].p).norm());
  }
  return worst;
}

TEST(Simulator, StationaryAccelerometerReadsGravity) {
  ScenarioSpec s = quiet(TrajectoryKind::Stationary, 2.0);
  const Simulation sim = synthesize(s);
  for (const auto& m : sim.imu) {
    EXPECT_LT((m.a - s.g).norm(), 1e-12);
    EXPECT_LT(m.w.norm(), 1e-12);
  }
}

TEST(Simulator, CircleCentripetalAcceleration) {
  ScenarioSpec s = quiet(TrajectoryKind::Circle, 20.0);
  s.amplitude = 4.0;
  s.speed = 2.0;
  s.attitude_amplitude = 0.0;
  const Simulation sim = synthesize(s);
  for (std::size_t k = 0; k < sim.imu.size(); ++k) {
    if (sim.imu[k].t < s.stationary_lead + s.ramp + 0.1) continue;
    const Vec3 kinematic = sim.imu[k].a - s.g;
    EXPECT_NEAR(kinematic.norm(), s.speed * s.speed / s.amplitude, 1e-3);
    EXPECT_NEAR(kinematic.z(), 0.0, 1e-9);
  }
}

TEST(Simulator, NoiselessDeadReckoningTracksTruth) {
  const ScenarioSpec s10 = quiet(TrajectoryKind::FigureEight, 10.0);
  EXPECT_LT(dead_reckoning_error(synthesize(s10), s10.g), 1e-6);
  const ScenarioSpec s60 = quiet(TrajectoryKind::FigureEight, 60.0);
  EXPECT_LT(dead_reckoning_error(synthesize(s60), s60.g), 1e-3);
}

TEST(Simulator, DeadReckoningAllKinds) {
  for (auto kind : {TrajectoryKind::Line, TrajectoryKind::Circle, TrajectoryKind::PiecewiseSpline}) {
    ScenarioSpec s = quiet(kind, 10.0);
    s.waypoints = {Vec3::Zero(), Vec3(1, 1, 0), Vec3(2, 0, 0.5), Vec3(3, -1, 0)};
    s.segment_time = 3.0;
    EXPECT_LT(dead_reckoning_error(synthesize(s), s.g), 1e-6);
  }
}

TEST(Simulator, BiasAndScaleAreRecoverable) {
  ScenarioSpec s = quiet(TrajectoryKind::FigureEight, 5.0);
  s.acc_bias = Vec3(0.1, -0.2, 0.05);
  s.gyro_bias = Vec3(0.01, 0.0, -0.02);
  s.acc_scale = Vec3(1.01, 0.98, 1.005);
  const Simulation sim = synthesize(s);
  NavVector x = truth_nav(sim.truth[0]);
  x.segment<3>(layout::kAccBias) = s.acc_bias;
  x.segment<3>(layout::kGyroBias) = s.gyro_bias;
  x.segment<3>(layout::kAccScale) = s.acc_scale;
  for (std::size_t k = 1; k < sim.imu.size(); ++k) x = nav_step(x, sim.imu[k], 0.01, s.g);
  EXPECT_LT((x.segment<3>(layout::kPos) - sim.truth.back().p).norm(), 1e-6);
}

TEST(Simulator, FramesRetriangulateToLandmarks) {
  ScenarioSpec s = quiet(TrajectoryKind::FigureEight, 8.0);
  const Simulation sim = synthesize(s);
  const auto truth = sim.truth_poses();
  // frames 40..44 (t = 4.0 .. 4.4 s), well into the motion
  std::map<std::uint64_t, std::vector<PoseObservation>> by_id;
  for (int f = 40; f < 45; ++f) {
    const std::size_t k = static_cast<std::size_t>(std::lround(sim.frames[f].t * s.imu_rate));
    for (const auto& o : sim.frames[f].obs) {
      PoseObservation po;
      po.p = truth[k].p;
      po.q = truth[k].q;
      po.pixel = Vec2(o.u, o.v);
      po.normalized = undistort(po.pixel, s.camera);
      by_id[o.feature_id].push_back(po);
    }
  }
  int checked = 0;
  for (const auto& [id, obs] : by_id) {
    if (obs.size() < 5) continue;
    const TriangulationResult r = FeatureSolver(obs, s.camera).solve();
    EXPECT_LT((r.p_star - sim.landmarks[id]).norm(), 1e-8);
    ++checked;
  }
  EXPECT_GT(checked, 5);
}

TEST(Simulator, NoiseMatchesFilterParametrization) {
  ScenarioSpec s = quiet(TrajectoryKind::Stationary, 200.0);
  s.accel_sigma = 0.02;
  s.gyro_sigma = 0.002;
  const Simulation sim = synthesize(s);
  const double n = static_cast<double>(sim.imu.size());
  Vec3 sa = Vec3::Zero(), sw = Vec3::Zero();
  for (const auto& m : sim.imu) {
    sa += (m.a - s.g).cwiseAbs2();
    sw += m.w.cwiseAbs2();
  }
  const double dt = 1.0 / s.imu_rate;
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(std::sqrt(sa[i] / n), s.accel_sigma * std::sqrt(dt), 0.03 * s.accel_sigma * std::sqrt(dt));
    EXPECT_NEAR(std::sqrt(sw[i] / n), s.gyro_sigma * std::sqrt(dt), 0.03 * s.gyro_sigma * std::sqrt(dt));
  }
}

TEST(Simulator, FrameTimingAndCount) {
  const Simulation sim = synthesize(quiet(TrajectoryKind::FigureEight, 6.0));
  ASSERT_EQ(sim.frames.size(), 61u);
  ASSERT_EQ(sim.imu.size(), 601u);
  for (std::size_t f = 0; f < sim.frames.size(); ++f) EXPECT_NEAR(sim.frames[f].t, 0.1 * f, 1e-12);
}

TEST(Simulator, SeedReproducibility) {
  ScenarioSpec s = realistic_figure_eight(5);
  s.duration = 3.0;
  const Simulation a = synthesize(s);
  const Simulation b = synthesize(s);
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t k = 0; k < a.imu.size(); ++k) {
    EXPECT_EQ(a.imu[k].a, b.imu[k].a);
    EXPECT_EQ(a.imu[k].w, b.imu[k].w);
  }
  ASSERT_EQ(a.frames.back().obs.size(), b.frames.back().obs.size());
  s.seed = 6;
  EXPECT_NE(synthesize(s).imu[10].a, a.imu[10].a);
}

TEST(Simulator, OcclusionBlanksFrames) {
  ScenarioSpec s = quiet(TrajectoryKind::FigureEight, 10.0);
  s.occlusions = {{3.0, 5.0}};
  const Simulation sim = synthesize(s);
  for (const auto& f : sim.frames) {
    if (f.t > 3.05 && f.t < 4.95) {
      EXPECT_TRUE(f.obs.empty()) << f.t;
    }
    if (f.t < 2.95 || f.t > 5.05) {
      EXPECT_FALSE(f.obs.empty()) << f.t;
    }
  }
}

TEST(Simulator, RejectsBadConfig) {
  ScenarioSpec s = quiet(TrajectoryKind::FigureEight, 10.0);
  s.occlusions = {{8.0, 12.0}};
  EXPECT_THROW(synthesize(s), Error);
  s = quiet(TrajectoryKind::FigureEight, -1.0);
  EXPECT_THROW(synthesize(s), Error);
  s = quiet(TrajectoryKind::PiecewiseSpline, 5.0);
  EXPECT_THROW(synthesize(s), Error);
  EXPECT_THROW(trajectory_kind_from_string("zigzag"), Error);
}

TEST(Simulator, RampStartsAndEndsSmoothly) {
  ScenarioSpec s;
  const double h = 1e-5;
  const double t0 = s.stationary_lead, t1 = s.stationary_lead + s.ramp;
  EXPECT_EQ(detail::motion_time(s, t0), 0.0);
  EXPECT_NEAR((detail::motion_time(s, t0 + h) - detail::motion_time(s, t0)) / h, 0.0, 1e-6);
  EXPECT_NEAR((detail::motion_time(s, t1 + h) - detail::motion_time(s, t1 - h)) / (2 * h), 1.0, 1e-6);
}

TEST(McSamples, ZeroCovarianceGivesIdenticalSamples) {
  McScenario s = default_mc_scenario();
  s.cov.setZero();
  for (const Vec& x : mc_scenario_samples(s, 100)) EXPECT_LT((x - s.mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(McSamples, MomentsMatchScenario) {
  const McScenario s = default_mc_scenario();
  const int n = 20000;
  const auto xs = mc_scenario_samples(s, n);
  Vec mean = Vec::Zero(s.cov.rows());
  for (const Vec& x : xs) mean += x;
  mean /= n;
  Mat cov = Mat::Zero(s.cov.rows(), s.cov.cols());
  for (const Vec& x : xs) cov += (x - mean) * (x - mean).transpose();
  cov /= n - 1;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) {
      const int j = 7 * i + k;
      const double sd = std::sqrt(s.cov(j, j));
      EXPECT_NEAR(mean[j], s.mean()[j], 3.0 * sd / std::sqrt(n));
      // sample variance has relative sd sqrt(2/n)
      EXPECT_NEAR(cov(j, j), s.cov(j, j), 3.0 * std::sqrt(2.0 / n) * s.cov(j, j));
    }
  }
}

TEST(McSamples, DeterministicPerSeed) {
  McScenario s = default_mc_scenario();
  const auto a = mc_scenario_samples(s, 50);
  const auto b = mc_scenario_samples(s, 50);
  for (int k = 0; k < 50; ++k) EXPECT_EQ(a[k], b[k]);
  s.seed = 99;
  EXPECT_NE(mc_scenario_samples(s, 1)[0], a[0]);
}

}  // namespace
}  // namespace pivo
