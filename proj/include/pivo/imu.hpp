#pragma once

// Discrete-time strapdown mechanization, stationarity detection and
// zero-velocity pseudo-measurements.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/quaternion.hpp"

namespace pivo {

struct ImuSample {
  double t = 0.0;  ///< seconds
  Vec3 a = Vec3::Zero();  ///< specific force, body frame, m/s^2
  Vec3 w = Vec3::Zero();  ///< angular rate, body frame, rad/s
};

/// Accelerometer/gyro noise uses the scaling cov(eps) = diag(sigma^2) * dt.
struct ProcessNoiseConfig {
  Vec3 sigma_a = Vec3::Constant(0.02);
  Vec3 sigma_w = Vec3::Constant(0.002);
  /// Gravity constant entering v_k = v_{k-1} + [R(q_k) a - g] dt.
  Vec3 g = Vec3(0.0, 0.0, -9.81);
  /// Optional bias random walk (variance rate); the filter model keeps biases fixed by default.
  double bias_walk_a = 0.0;
  double bias_walk_w = 0.0;
};

using NavVector = Eigen::Matrix<double, layout::kNavDim, 1>;
using NavMatrix = Eigen::Matrix<double, layout::kNavDim, layout::kNavDim>;
using NavNoiseMatrix = Eigen::Matrix<double, layout::kNavDim, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct CompensatedImu {
  Vec3 a;
  Vec3 w;
};

inline CompensatedImu compensate(const ImuSample& sample, const FilterState& state) {
  if (!sample.a.allFinite() || !sample.w.allFinite()) {
    throw Error(ErrorKind::InvalidInput, "non-finite IMU sample");
  }
  return {state.acc_scale().cwiseProduct(sample.a) - state.acc_bias(),
          sample.w - state.gyro_bias()};
}

/// Mean map of the 19-dim navigation block. `noise` = (eps_a, eps_w) enters the
/// compensated inputs additively; pass zero for the mean prediction.
inline NavVector nav_step(const NavVector& x, const ImuSample& sample, double dt, const Vec3& g,
                          const Vec6& noise = Vec6::Zero()) {
  using namespace layout;
  const Vec3 a_tilde =
      x.segment<3>(kAccScale).cwiseProduct(sample.a) - x.segment<3>(kAccBias) + noise.head<3>();
  const Vec3 w_tilde = sample.w - x.segment<3>(kGyroBias) + noise.tail<3>();

  NavVector out = x;
  const Vec4 q_next = quat::omega_matrix(w_tilde * dt) * x.segment<4>(kQuat);
  out.segment<4>(kQuat) = q_next;
  out.segment<3>(kVel) = x.segment<3>(kVel) + (quat::rotation(q_next) * a_tilde - g) * dt;
  out.segment<3>(kPos) = x.segment<3>(kPos) + x.segment<3>(kVel) * dt;
  return out;
}

struct NavJacobians {
  NavMatrix F;
  NavNoiseMatrix L;
};

/// Closed-form derivatives of `nav_step` w.r.t. the state (F) and noise (L).
inline NavJacobians nav_jacobians(const NavVector& x, const ImuSample& sample, double dt) {
  using namespace layout;
  const Vec3 a_tilde = x.segment<3>(kAccScale).cwiseProduct(sample.a) - x.segment<3>(kAccBias);
  const Vec3 w_tilde = sample.w - x.segment<3>(kGyroBias);
  const Vec4 q = x.segment<4>(kQuat);
  const Mat4 omega = quat::omega_matrix(w_tilde * dt);
  const Vec4 q_next = omega * q;
  const Mat43 dq_dphi = quat::omega_jacobian(w_tilde * dt, q);
  const Mat3 R = quat::rotation(q_next);
  const Mat34 dRa_dq = quat::rotate_jacobian(q_next, a_tilde);

  NavJacobians j;
  j.F.setIdentity();
  j.L.setZero();

  // position
  j.F.block<3, 3>(kPos, kVel) = dt * Mat3::Identity();

  // orientation
  j.F.block<4, 4>(kQuat, kQuat) = omega;
  j.F.block<4, 3>(kQuat, kGyroBias) = -dt * dq_dphi;
  j.L.block<4, 3>(kQuat, 3) = dt * dq_dphi;

  // velocity, through the updated quaternion
  j.F.block<3, 4>(kVel, kQuat) = dt * dRa_dq * omega;
  j.F.block<3, 3>(kVel, kAccBias) = -dt * R;
  j.F.block<3, 3>(kVel, kGyroBias) = dt * dRa_dq * (-dt * dq_dphi);
  j.F.block<3, 3>(kVel, kAccScale) = dt * R * sample.a.asDiagonal();
  j.L.block<3, 3>(kVel, 0) = dt * R;
  j.L.block<3, 3>(kVel, 3) = dt * dRa_dq * (dt * dq_dphi);
  return j;
}

inline Eigen::Matrix<double, 6, 6> process_noise(const ProcessNoiseConfig& cfg, double dt) {
  Vec6 d;
  d << cfg.sigma_a.cwiseAbs2(), cfg.sigma_w.cwiseAbs2();
  return (d * dt).asDiagonal();
}

/// One EKF prediction step driven by an IMU sample. The trail poses have no
/// dynamics, so only the navigation rows/columns of the covariance change;
/// the result equals `ekf_predict` with the block-identity F.
inline FilterState propagate(const FilterState& state, const ImuSample& sample, double dt,
                             const ProcessNoiseConfig& cfg) {
  if (!(dt > 0.0) || dt > 0.1) {
    throw Error(ErrorKind::Timestamp, "IMU step dt=" + std::to_string(dt) + " outside (0, 0.1] s");
  }
  if (!sample.a.allFinite() || !sample.w.allFinite()) {
    throw Error(ErrorKind::InvalidInput, "non-finite IMU sample");
  }
  constexpr int N = layout::kNavDim;
  const NavVector x = state.mean.head<N>();
  const NavJacobians jac = nav_jacobians(x, sample, dt);
  const int n = state.dim();
  const int rest = n - N;

  FilterState out;
  out.mean = state.mean;
  out.mean.head<N>() = nav_step(x, sample, dt, cfg.g);
  out.cov.resize(n, n);
  out.cov.topLeftCorner<N, N>() = jac.F * state.cov.topLeftCorner<N, N>() * jac.F.transpose() +
                                  jac.L * process_noise(cfg, dt) * jac.L.transpose();
  if (rest > 0) {
    out.cov.topRightCorner(N, rest) = jac.F * state.cov.topRightCorner(N, rest);
    out.cov.bottomLeftCorner(rest, N) = out.cov.topRightCorner(N, rest).transpose();
    out.cov.bottomRightCorner(rest, rest) = state.cov.bottomRightCorner(rest, rest);
  }
  if (cfg.bias_walk_a > 0.0) {
    out.cov.diagonal().segment<3>(layout::kAccBias).array() += cfg.bias_walk_a * dt;
  }
  if (cfg.bias_walk_w > 0.0) {
    out.cov.diagonal().segment<3>(layout::kGyroBias).array() += cfg.bias_walk_w * dt;
  }
  symmetrize(out.cov);
  return out;
}

struct StationaryConfig {
  double window = 0.5;  ///< s
  double thr_a = 0.08;  ///< std of |a|, m/s^2
  double thr_w = 0.01;  ///< std of |w|, rad/s
};

namespace detail {
inline double sample_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}
}  // namespace detail

/// True when both |a| and |w| are quiet over the window.
inline bool detect_stationary(std::span<const ImuSample> window, const StationaryConfig& cfg = {}) {
  if (window.size() < 2 || window.back().t - window.front().t < cfg.window - 1e-9) {
    throw Error(ErrorKind::InsufficientData, "stationarity window shorter than required span");
  }
  std::vector<double> an, wn;
  an.reserve(window.size());
  wn.reserve(window.size());
  for (const auto& s : window) {
    an.push_back(s.a.norm());
    wn.push_back(s.w.norm());
  }
  return detail::sample_std(an) < cfg.thr_a && detail::sample_std(wn) < cfg.thr_w;
}

/// Zero-velocity pseudo-measurement.
inline FilterState zupt_update(const FilterState& state, double r_zupt = 1e-4) {
  Mat H = Mat::Zero(3, state.dim());
  H.block<3, 3>(0, layout::kVel).setIdentity();
  const Vec innovation = -state.velocity();
  return ekf_update(state, innovation, H, r_zupt * Mat::Identity(3, 3));
}

/// Soft speed prior: when |v| exceeds `max_speed`, pull it back onto the sphere.
inline FilterState speed_prior_update(const FilterState& state, double max_speed, double r_speed) {
  const Vec3 v = state.velocity();
  const double speed = v.norm();
  if (speed <= max_speed) return state;
  Mat H = Mat::Zero(3, state.dim());
  H.block<3, 3>(0, layout::kVel).setIdentity();
  const Vec innovation = v * (max_speed / speed) - v;
  return ekf_update(state, innovation, H, r_speed * Mat::Identity(3, 3));
}

struct InitConfig {
  double align_window = 1.0;  ///< s of accelerometer averaged for gravity alignment
  double sigma_p = 1e-6;
  double sigma_tilt = 1e-3;
  double sigma_yaw = 1e-6;
  double sigma_v = 0.1;
  double sigma_ba = 0.1;
  double sigma_bw = 0.01;
  double sigma_ta = 0.01;
};

/// Navigation state at the first sample: origin, zero velocity, roll/pitch from
/// the mean specific force over the alignment window, zero yaw.
inline FilterState initial_state(std::span<const ImuSample> samples, int n_a,
                                 const ProcessNoiseConfig& noise, const InitConfig& cfg = {}) {
  if (samples.empty()) throw Error(ErrorKind::InsufficientData, "no IMU samples for initialization");
  Vec3 mean_a = Vec3::Zero();
  int count = 0;
  for (const auto& s : samples) {
    if (s.t - samples.front().t > cfg.align_window + 1e-9) break;
    mean_a += s.a;
    ++count;
  }
  mean_a /= count;
  if (mean_a.norm() < 1e-6) throw Error(ErrorKind::InsufficientData, "zero mean specific force");

  // Stationary: R(q) a = g, so align the measured direction with g.
  const Vec4 q_arc = quat::from_two_vectors(mean_a.normalized(), noise.g.normalized());
  // the shortest arc carries a small heading; remove it about the vertical
  const Mat3 r_arc = quat::rotation(q_arc);
  const Vec3 up = -noise.g.normalized();
  const double yaw = std::atan2(r_arc(1, 0), r_arc(0, 0));
  const Vec4 q0 = quat::normalized(quat::multiply(quat::from_rotation_vector(-yaw * up), q_arc));

  FilterState s(n_a);
  s.mean.segment<4>(layout::kQuat) = q0;
  Mat& P = s.cov;
  P.block<3, 3>(layout::kPos, layout::kPos) = cfg.sigma_p * cfg.sigma_p * Mat3::Identity();
  // tilt about the world axes orthogonal to gravity, yaw about gravity
  const Vec3 down = noise.g.normalized();
  Vec3 e1 = down.unitOrthogonal();
  Vec3 e2 = down.cross(e1);
  Mat3 rot_cov = cfg.sigma_tilt * cfg.sigma_tilt * (e1 * e1.transpose() + e2 * e2.transpose()) +
                 cfg.sigma_yaw * cfg.sigma_yaw * down * down.transpose();
  const Mat43 G = quat::world_perturbation_jacobian(q0);
  P.block<4, 4>(layout::kQuat, layout::kQuat) = G * rot_cov * G.transpose();
  P.block<3, 3>(layout::kVel, layout::kVel) = cfg.sigma_v * cfg.sigma_v * Mat3::Identity();
  P.block<3, 3>(layout::kAccBias, layout::kAccBias) = cfg.sigma_ba * cfg.sigma_ba * Mat3::Identity();
  P.block<3, 3>(layout::kGyroBias, layout::kGyroBias) =
      cfg.sigma_bw * cfg.sigma_bw * Mat3::Identity();
  P.block<3, 3>(layout::kAccScale, layout::kAccScale) =
      cfg.sigma_ta * cfg.sigma_ta * Mat3::Identity();
  return s;
}

}  // namespace pivo
