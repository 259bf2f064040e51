#pragma once

// Synthetic scenarios with exact ground truth.
//
// The IMU stream inverts the filter's own discrete mechanization: for sampled
// poses (p_k, q_k) the gyro reading reproduces q_k from q_{k-1} through
// Omega, and the accelerometer reproduces the finite-difference velocity
// v_k = (p_{k+1} - p_k) / dt. Integrating the noiseless stream with the
// filter's propagation therefore lands on the sampled trajectory up to
// round-off, which isolates estimator errors from integration errors.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/imu.hpp"
#include "pivo/quaternion.hpp"
#include "pivo/tracks.hpp"
#include "pivo/trajectory.hpp"

namespace pivo {

enum class TrajectoryKind { Stationary, Line, Circle, FigureEight, PiecewiseSpline };

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "stationary") return TrajectoryKind::Stationary;
  if (s == "line") return TrajectoryKind::Line;
  if (s == "circle") return TrajectoryKind::Circle;
  if (s == "figure-eight" || s == "figure_eight") return TrajectoryKind::FigureEight;
  if (s == "piecewise-spline" || s == "spline") return TrajectoryKind::PiecewiseSpline;
  throw Error(ErrorKind::Config, "unknown trajectory kind '" + s + "'");
}

/// Camera used by the desk scenarios: 480 x 640 portrait, looking along body +x.
inline CameraModel default_sim_camera() {
  CameraModel cam;
  cam.fx = 420.0;
  cam.fy = 420.0;
  cam.cx = 239.5;
  cam.cy = 319.5;
  cam.k1 = -0.05;
  cam.k2 = 0.01;
  cam.p1 = 2e-4;
  cam.p2 = -1e-4;
  cam.width = 480;
  cam.height = 640;
  // camera x = body y, camera y = body z, camera z = body x
  Mat3 r;
  r << 0, 1, 0,
       0, 0, 1,
       1, 0, 0;
  const Eigen::Quaterniond e(r);
  cam.q_ic = quat::normalized(Vec4(e.w(), e.x(), e.y(), e.z()));
  cam.p_ic = Vec3(0.05, 0.01, -0.02);
  return cam;
}

struct ScenarioSpec {
  TrajectoryKind kind = TrajectoryKind::FigureEight;
  // trajectory parameters
  double amplitude = 3.0;  ///< m; figure-eight lateral half-width, circle radius
  double period = 20.0;  ///< s per loop (figure-eight, circle)
  double speed = 1.0;  ///< m/s for line
  Vec3 direction = Vec3(0.0, 1.0, 0.0);  ///< line direction
  std::vector<Vec3> waypoints;  ///< piecewise spline control points (first should be 0)
  double segment_time = 5.0;  ///< s per spline segment
  double attitude_amplitude = 0.3;  ///< rad, yaw swing; pitch/roll scaled down
  double stationary_lead = 1.0;  ///< s at rest before motion starts
  double ramp = 2.0;  ///< s to blend from rest into motion

  double duration = 60.0;
  double imu_rate = 100.0;
  double frame_rate = 10.0;

  int landmark_count = 400;
  Vec3 landmark_min = Vec3(5.0, -9.0, -6.0);
  Vec3 landmark_max = Vec3(13.0, 9.0, 6.0);

  // noise: cov(accel) = accel_sigma^2 dt per sample (filter parametrization)
  double accel_sigma = 0.0;
  double gyro_sigma = 0.0;
  double pixel_sigma = 0.0;

  Vec3 acc_bias = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 acc_scale = Vec3::Ones();
  /// Model-mismatch switch: bias random walk (std per sqrt(s)); 0 keeps the model exact.
  double bias_walk = 0.0;

  std::vector<std::pair<double, double>> occlusions;
  Vec3 g = Vec3(0.0, 0.0, -9.81);
  CameraModel camera = default_sim_camera();
  std::uint64_t seed = 1;

  void validate() const {
    if (!(imu_rate > 0.0) || !(frame_rate > 0.0)) throw Error(ErrorKind::Config, "rates must be positive");
    if (!(duration > 0.0)) throw Error(ErrorKind::Config, "duration must be positive");
    for (const auto& [a, b] : occlusions) {
      if (a < 0.0 || b > duration || b < a) throw Error(ErrorKind::Config, "occlusion window outside duration");
    }
  }
};

/// Realistic-noise figure-eight used by the closed-loop checks.
inline ScenarioSpec realistic_figure_eight(std::uint64_t seed) {
  ScenarioSpec s;
  s.accel_sigma = 0.02;
  s.gyro_sigma = 0.002;
  s.pixel_sigma = 1.0;
  s.acc_bias = Vec3(0.03, -0.02, 0.04);
  s.gyro_bias = Vec3(0.002, -0.001, 0.0015);
  s.acc_scale = Vec3(1.005, 0.997, 1.002);
  s.seed = seed;
  return s;
}

struct GroundTruthSample {
  double t = 0.0;
  Vec3 p, v;
  Vec4 q;
};

struct Simulation {
  std::vector<ImuSample> imu;
  std::vector<FrameEvent> frames;
  std::vector<GroundTruthSample> truth;  ///< one per IMU sample
  std::vector<Vec3> landmarks;

  std::vector<TimedPose> truth_poses() const {
    std::vector<TimedPose> out;
    out.reserve(truth.size());
    for (const auto& s : truth) out.push_back({s.t, s.p, s.q});
    return out;
  }
};

namespace detail {

// Motion time: zero during the lead, a C2 blend during the ramp, then t.
inline double motion_time(const ScenarioSpec& s, double t) {
  if (t <= s.stationary_lead) return 0.0;
  const double tr = t - s.stationary_lead;
  if (s.ramp <= 0.0) return tr;
  if (tr >= s.ramp) return 0.5 * s.ramp + (tr - s.ramp);
  const double u = tr / s.ramp;
  return s.ramp * (u * u * u * u * (2.5 - 3.0 * u + u * u));
}

inline Vec3 catmull_rom(const std::vector<Vec3>& w, double x) {
  const int n = static_cast<int>(w.size());
  const int i = std::clamp(static_cast<int>(std::floor(x)), 0, n - 2);
  const double u = std::clamp(x - i, 0.0, 1.0);
  const Vec3& p0 = w[std::max(i - 1, 0)];
  const Vec3& p1 = w[i];
  const Vec3& p2 = w[i + 1];
  const Vec3& p3 = w[std::min(i + 2, n - 1)];
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u);
}

inline Vec3 position_at(const ScenarioSpec& s, double m) {
  const double w = 2.0 * std::numbers::pi / s.period;
  switch (s.kind) {
    case TrajectoryKind::Stationary:
      return Vec3::Zero();
    case TrajectoryKind::Line:
      return s.speed * m * s.direction.normalized();
    case TrajectoryKind::Circle: {
      const double r = s.amplitude;
      const double om = s.speed / r;
      return Vec3(r * std::sin(om * m), r * (1.0 - std::cos(om * m)), 0.0);
    }
    case TrajectoryKind::FigureEight:
      return Vec3(0.5 * s.amplitude * std::sin(2.0 * w * m), s.amplitude * std::sin(w * m),
                  0.3 * std::sin(1.5 * w * m));
    case TrajectoryKind::PiecewiseSpline: {
      if (s.waypoints.size() < 2) throw Error(ErrorKind::Config, "spline needs at least two waypoints");
      return catmull_rom(s.waypoints, m / s.segment_time) - s.waypoints.front();
    }
  }
  return Vec3::Zero();
}

inline Vec4 attitude_at(const ScenarioSpec& s, double m) {
  const double a = s.attitude_amplitude;
  if (a == 0.0 || s.kind == TrajectoryKind::Stationary) return quat::identity();
  const double w = 2.0 * std::numbers::pi / 17.0;
  return quat::from_euler(a * std::sin(w * m), 0.35 * a * std::sin(1.7 * w * m),
                          0.3 * a * std::sin(2.3 * w * m));
}

}  // namespace detail

inline bool occluded(const ScenarioSpec& s, double t) {
  for (const auto& [a, b] : s.occlusions) {
    if (t >= a && t < b) return true;
  }
  return false;
}

inline Simulation synthesize(const ScenarioSpec& spec) {
  spec.validate();
  Simulation sim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gauss3 = [&]() { return Vec3(normal(rng), normal(rng), normal(rng)); };

  // landmarks first so their layout does not depend on the noise settings
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < spec.landmark_count; ++i) {
    Vec3 l;
    for (int k = 0; k < 3; ++k) l[k] = spec.landmark_min[k] + unit(rng) * (spec.landmark_max[k] - spec.landmark_min[k]);
    sim.landmarks.push_back(l);
  }

  const double dt = 1.0 / spec.imu_rate;
  const long n = std::lround(spec.duration * spec.imu_rate);
  std::vector<double> t(n + 2);
  std::vector<Vec3> p(n + 2);
  std::vector<Vec4> q(n + 2);
  for (long k = 0; k < n + 2; ++k) {
    t[k] = static_cast<double>(k) * dt;
    const double m = detail::motion_time(spec, t[k]);
    p[k] = detail::position_at(spec, m);
    q[k] = detail::attitude_at(spec, m);
  }
  // keep consecutive quaternions in the same hemisphere
  for (long k = 1; k < n + 2; ++k) {
    if (q[k].dot(q[k - 1]) < 0.0) q[k] = -q[k];
  }
  std::vector<Vec3> v(n + 1);
  for (long k = 0; k <= n; ++k) v[k] = (p[k + 1] - p[k]) / dt;

  const double sa = spec.accel_sigma * std::sqrt(dt);
  const double sw = spec.gyro_sigma * std::sqrt(dt);
  const double sb = spec.bias_walk * std::sqrt(dt);
  Vec3 ba = spec.acc_bias;
  Vec3 bw = spec.gyro_bias;
  const Vec3 inv_scale = spec.acc_scale.cwiseInverse();

  sim.imu.reserve(n + 1);
  sim.truth.reserve(n + 1);
  for (long k = 0; k <= n; ++k) {
    Vec3 a_tilde, w_tilde;
    if (k == 0) {
      a_tilde = quat::rotation(q[0]).transpose() * spec.g;
      w_tilde.setZero();
    } else {
      w_tilde = quat::to_rotation_vector(quat::multiply(quat::conjugate(q[k - 1]), q[k])) / dt;
      a_tilde = quat::rotation(q[k]).transpose() * ((v[k] - v[k - 1]) / dt + spec.g);
    }
    if (sb > 0.0) {
      ba += sb * gauss3();
      bw += 0.1 * sb * gauss3();
    }
    ImuSample s;
    s.t = t[k];
    s.a = inv_scale.cwiseProduct(a_tilde + ba + sa * gauss3());
    s.w = w_tilde + bw + sw * gauss3();
    sim.imu.push_back(s);
    sim.truth.push_back({t[k], p[k], v[k], quat::normalized(q[k])});
  }

  const long stride = std::max<long>(1, std::lround(spec.imu_rate / spec.frame_rate));
  const CameraModel& cam = spec.camera;
  for (long k = 0; k <= n; k += stride) {
    FrameEvent f;
    f.t = t[k];
    const CameraPose pose = camera_extrinsics(p[k], q[k], cam);
    const bool blank = occluded(spec, t[k]);
    for (std::size_t l = 0; l < sim.landmarks.size(); ++l) {
      const Vec3 pc = world_to_camera(pose, sim.landmarks[l]);
      const Vec2 noise(normal(rng), normal(rng));
      if (blank || pc.z() < 0.2) continue;
      const Vec2 px = project(pc, cam) + spec.pixel_sigma * noise;
      if (!cam.inside(px.x(), px.y())) continue;
      f.obs.push_back({static_cast<std::uint64_t>(l), px.x(), px.y()});
    }
    sim.frames.push_back(std::move(f));
  }
  return sim;
}

/// Three-pose, one-feature setup for comparing update linearizations against
/// Monte Carlo.
struct McScenario {
  std::vector<Vec3> p;
  std::vector<Vec4> q;
  Mat cov;  ///< 7m x 7m joint covariance of (p_1, q_1, ..., p_m, q_m)
  Vec3 landmark;
  CameraModel camera;
  double sigma_uv = 1.0;
  std::uint64_t seed = 3;

  Vec mean() const {
    Vec m(7 * p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.segment<3>(7 * i) = p[i];
      m.segment<4>(7 * i + 3) = q[i];
    }
    return m;
  }
};

/// Poses on a short arc around a feature 4 m ahead, with correlated position
/// and orientation uncertainty (correlation decaying along the trail).
inline McScenario default_mc_scenario(double scale = 1.0) {
  McScenario s;
  s.camera = default_sim_camera();
  s.landmark = Vec3(4.0, 0.3, -0.2);
  const int m = 3;
  for (int i = 0; i < m; ++i) {
    s.p.push_back(Vec3(0.0, 0.25 * i, -0.05 * i));
    s.q.push_back(quat::from_euler(0.03 * i, 0.01 * i, 0.0));
  }
  const double sp = 0.04 * scale;
  const double sr = 0.012 * scale;
  Mat3 pos_cov = Mat3::Zero();
  pos_cov.diagonal() << sp * sp, 2.0 * sp * sp, 0.5 * sp * sp;
  pos_cov(0, 1) = pos_cov(1, 0) = 0.6 * sp * sp;
  Mat3 rot_cov = Mat3::Zero();
  rot_cov.diagonal() << 0.5 * sr * sr, sr * sr, 1.5 * sr * sr;
  rot_cov(1, 2) = rot_cov(2, 1) = 0.4 * sr * sr;
  s.cov = Mat::Zero(7 * m, 7 * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double rho = std::pow(0.8, std::abs(i - j));
      const Mat43 Gi = quat::world_perturbation_jacobian(s.q[i]);
      const Mat43 Gj = quat::world_perturbation_jacobian(s.q[j]);
      s.cov.block<3, 3>(7 * i, 7 * j) = rho * pos_cov;
      s.cov.block<4, 4>(7 * i + 3, 7 * j + 3) = rho * Gi * rot_cov * Gj.transpose();
    }
  }
  return s;
}

/// Draws joint pose samples x ~ N(mean, cov) (quaternions renormalized).
/// Deterministic for a given seed; zero covariance gives identical samples.
inline std::vector<Vec> mc_scenario_samples(const McScenario& s, int n_mc) {
  const Vec mean = s.mean();
  Eigen::SelfAdjointEigenSolver<Mat> eig(s.cov);
  const Vec sd = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat L = eig.eigenvectors() * sd.asDiagonal();
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> out;
  out.reserve(n_mc);
  Vec z(mean.size());
  for (int k = 0; k < n_mc; ++k) {
    for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
    Vec x = mean + L * z;
    for (std::size_t i = 0; i < s.p.size(); ++i) x.segment<4>(7 * i + 3).normalize();
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace pivo
