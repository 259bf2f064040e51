#pragma once

// Monte Carlo check of the visual update linearization on a short track.
//
// The quantity summarized by a Gaussian in the update is the predicted pixel
// vector h(x) = pi(poses, p*(poses)), where p* is re-triangulated from the
// fixed observed pixels. Its exact distribution under the pose Gaussian is
// sampled; the two linearizations compared are
//   full:        N(h(m), H P H' + R), H the total derivative through p*;
//   fixed point: N(h(m), Hx P Hx' + R), p* treated as a known constant.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/quaternion.hpp"
#include "pivo/simulator.hpp"
#include "pivo/triangulation.hpp"
#include "pivo/visual_update.hpp"

namespace pivo {

struct Ellipse2 {
  double angle_deg = 0.0;  ///< major axis direction in (-90, 90]
  double major = 0.0;  ///< 95% semi-axis, px
  double minor = 0.0;
  Vec2 center = Vec2::Zero();
};

struct FrameEllipses {
  Ellipse2 mc, full, fixed_point;
};

struct UpdateComparison {
  GaussianMoments mc, full, fixed_point;
  double kl_full = 0.0;  ///< KL(MC || full-Jacobian Gaussian)
  double kl_fixed_point = 0.0;  ///< KL(MC || fixed-feature Gaussian)
  std::vector<FrameEllipses> ellipses;
  int samples_used = 0;
  int samples_failed = 0;
};

/// KL(N0 || N1) for k-dim Gaussians.
inline double gaussian_kl(const Vec& mu0, const Mat& S0, const Vec& mu1, const Mat& S1) {
  const int k = static_cast<int>(mu0.size());
  const Eigen::LLT<Mat> l1(S1);
  const Eigen::LLT<Mat> l0(S0);
  if (l1.info() != Eigen::Success || l0.info() != Eigen::Success) {
    throw Error(ErrorKind::NumericalFailure, "covariance not positive definite in KL");
  }
  const Vec d = mu1 - mu0;
  const double tr = l1.solve(S0).trace();
  const double maha = d.dot(l1.solve(d));
  const double logdet1 = 2.0 * l1.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet0 = 2.0 * l0.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * (tr + maha - k + logdet1 - logdet0);
}

inline Ellipse2 confidence_ellipse(const Vec2& center, const Mat2& cov, double confidence = 0.95) {
  Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
  const Vec2 major = eig.eigenvectors().col(1);
  const double c = chi_square_quantile(confidence, 2);
  Ellipse2 e;
  e.center = center;
  double a = std::atan2(major.y(), major.x()) * 180.0 / std::numbers::pi;
  if (a <= -90.0) a += 180.0;
  if (a > 90.0) a -= 180.0;
  e.angle_deg = a;
  e.major = std::sqrt(c * std::max(eig.eigenvalues()[1], 0.0));
  e.minor = std::sqrt(c * std::max(eig.eigenvalues()[0], 0.0));
  return e;
}

/// Smallest angle between two undirected axes, degrees.
inline double axis_angle_difference(double a_deg, double b_deg) {
  double d = std::fmod(std::abs(a_deg - b_deg), 180.0);
  return std::min(d, 180.0 - d);
}

/// d pixels / d (p_i, q_i) with the world feature position held fixed.
inline Mat fixed_feature_jacobian(const std::vector<PoseObservation>& obs, const Vec3& p_star,
                                  const CameraModel& cam) {
  const int m = static_cast<int>(obs.size());
  Mat H = Mat::Zero(2 * m, 7 * m);
  const Mat3 R_ic = quat::rotation(cam.q_ic);
  for (int i = 0; i < m; ++i) {
    const Mat3 R = quat::rotation(obs[i].q);
    const auto dR = quat::rotation_derivatives(obs[i].q);
    const Mat3 A = R_ic * R.transpose();
    const Vec3 c = obs[i].p + R * cam.p_ic;
    const Vec3 pc = A * (p_star - c);
    Mat23 dpix;
    project(pc, cam, &dpix);
    Eigen::Matrix<double, 3, 7> dpc;
    dpc.leftCols<3>() = -A;
    for (int j = 0; j < 4; ++j) {
      dpc.col(3 + j) = R_ic * dR[j].transpose() * (p_star - c) - A * (dR[j] * cam.p_ic);
    }
    H.block(2 * i, 7 * i, 2, 7) = dpix * dpc;
  }
  return H;
}

inline std::vector<PoseObservation> scenario_observations(const McScenario& s, const Vec& poses,
                                                          const std::vector<Vec2>& pixels) {
  std::vector<PoseObservation> obs;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    PoseObservation o;
    o.p = poses.segment<3>(7 * i);
    o.q = poses.segment<4>(7 * i + 3);
    o.pixel = pixels[i];
    o.normalized = undistort(o.pixel, s.camera);
    obs.push_back(o);
  }
  return obs;
}

/// Observed pixels of the scenario landmark from the mean poses (noise free).
inline std::vector<Vec2> scenario_pixels(const McScenario& s) {
  std::vector<Vec2> px;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    const CameraPose pose = camera_extrinsics(s.p[i], s.q[i], s.camera);
    px.push_back(project(world_to_camera(pose, s.landmark), s.camera));
  }
  return px;
}

inline UpdateComparison compare_update_models(const McScenario& s, int n_mc) {
  if (n_mc < 10000) throw Error(ErrorKind::InsufficientSamples, "n_mc must be at least 1e4");
  const int m = static_cast<int>(s.p.size());
  const int k = 2 * m;
  const Mat R = s.sigma_uv * s.sigma_uv * Mat::Identity(k, k);
  const std::vector<Vec2> pixels = scenario_pixels(s);
  const Vec mean = s.mean();

  UpdateComparison out;
  {
    const FeatureSolver solver(scenario_observations(s, mean, pixels), s.camera);
    const TriangulationResult res = solver.solve();
    const FeaturePrediction pred = solver.predict(res);
    out.full.mean = pred.pixels;
    out.full.cov = pred.jacobian * s.cov * pred.jacobian.transpose() + R;
    const Mat Hx = fixed_feature_jacobian(scenario_observations(s, mean, pixels), res.p_star, s.camera);
    out.fixed_point.mean = pred.pixels;
    out.fixed_point.cov = Hx * s.cov * Hx.transpose() + R;
  }

  TriangulationOptions value_only;
  value_only.differentiate = false;
  Vec sum = Vec::Zero(k);
  Mat outer = Mat::Zero(k, k);
  std::vector<Vec> hs;
  hs.reserve(n_mc);
  for (const Vec& x : mc_scenario_samples(s, n_mc)) {
    try {
      const FeatureSolver solver(scenario_observations(s, x, pixels), s.camera, value_only);
      const TriangulationResult res = solver.solve();
      hs.push_back(solver.predict_pixels(res.theta));
    } catch (const Error&) {
      ++out.samples_failed;
    }
  }
  out.samples_used = static_cast<int>(hs.size());
  if (out.samples_used < 10000) throw Error(ErrorKind::InsufficientSamples, "too many failed Monte Carlo samples");
  for (const Vec& h : hs) sum += h;
  const Vec mu = sum / out.samples_used;
  for (const Vec& h : hs) outer += (h - mu) * (h - mu).transpose();
  out.mc.mean = mu;
  out.mc.cov = outer / (out.samples_used - 1) + R;
  symmetrize(out.mc.cov);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(out.mc.cov, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorKind::InsufficientSamples, "degenerate Monte Carlo covariance");
  }

  out.kl_full = gaussian_kl(out.mc.mean, out.mc.cov, out.full.mean, out.full.cov);
  out.kl_fixed_point = gaussian_kl(out.mc.mean, out.mc.cov, out.fixed_point.mean, out.fixed_point.cov);

  for (int i = 0; i < m; ++i) {
    FrameEllipses e;
    e.mc = confidence_ellipse(out.mc.mean.segment<2>(2 * i), out.mc.cov.block<2, 2>(2 * i, 2 * i));
    e.full = confidence_ellipse(out.full.mean.segment<2>(2 * i), out.full.cov.block<2, 2>(2 * i, 2 * i));
    e.fixed_point = confidence_ellipse(out.fixed_point.mean.segment<2>(2 * i),
                                       out.fixed_point.cov.block<2, 2>(2 * i, 2 * i));
    out.ellipses.push_back(e);
  }
  return out;
}

}  // namespace pivo
