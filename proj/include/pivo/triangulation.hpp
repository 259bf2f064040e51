#pragma once

// Inverse-depth triangulation of one feature track over the poses that observed
// it, together with the forward-mode derivative of the converged estimate with
// respect to those poses.
//
// The point is parametrized in the anchor (first observing) camera frame as
// theta = (X/Z, Y/Z, 1/Z). For observing frame i
//
//   h_i(theta) = C_i (theta1, theta2, 1)' + theta3 t_i,
//   C_i = A_i A_1',  t_i = A_i (c_1 - c_i),
//
// with A_i the world->camera rotation and c_i the camera centre. Gauss-Newton
// minimizes sum_i |y_i - pi(h_i)|^2 over normalized image coordinates y_i. Each
// iteration is differentiated with respect to the 7m pose parameters
// (p_i, q_i) of the observing poses, starting from the two-view intersection.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/quaternion.hpp"

namespace pivo {

struct InverseDepthPoint {
  Vec3 theta = Vec3::Zero();
};

/// One observation of a track with the device pose it was taken from.
struct PoseObservation {
  Vec3 p;
  Vec4 q;
  Vec2 pixel;  ///< raw (distorted) pixel
  Vec2 normalized;  ///< undistorted normalized coordinates
};

struct TriangulationOptions {
  double min_parallax_deg = 1.0;
  double max_depth = 200.0;
  int max_iter = 10;
  double step_tol = 1e-10;
  double max_condition = 1e12;
  /// Chain-rule the two-view initializer into the derivative; off for ablation.
  bool include_init_derivative = true;
  /// Skip all tangent propagation (value-only solves, e.g. Monte Carlo).
  bool differentiate = true;
};

struct TriangulationResult {
  Vec3 theta = Vec3::Zero();
  Vec3 p_star = Vec3::Zero();
  /// d theta / d (p_1, q_1, ..., p_m, q_m), 3 x 7m.
  Mat dtheta_dposes;
  double residual_rms = 0.0;  ///< px
  int iterations = 0;
  bool converged = false;
};

/// Predicted pixels of a triangulated feature and their total derivative.
struct FeaturePrediction {
  Vec pixels;  ///< 2m
  Mat jacobian;  ///< 2m x 7m, feature position integrated out
};

/// Holds the relative geometry of a track (C_i, t_i and their pose tangents)
/// and runs initialization, refinement and prediction on it.
class FeatureSolver {
 public:
  FeatureSolver(std::vector<PoseObservation> obs, const CameraModel& cam,
                TriangulationOptions opts = {})
      : obs_(std::move(obs)), cam_(cam), opts_(opts) {
    if (obs_.size() < 2) throw Error(ErrorKind::InsufficientData, "track needs at least 2 observations");
    build_geometry();
  }

  int num_frames() const { return static_cast<int>(obs_.size()); }
  int num_params() const { return 7 * num_frames(); }
  const TriangulationOptions& options() const { return opts_; }

  /// Midpoint of the common perpendicular between the first and last rays.
  /// Fills the 3 x 7m tangent when `dtheta` is given.
  InverseDepthPoint two_view_init(Mat* dtheta = nullptr) const {
    const int m = num_frames() - 1;
    const Vec3 u(obs_[0].normalized.x(), obs_[0].normalized.y(), 1.0);
    const Vec3 ym(obs_[m].normalized.x(), obs_[m].normalized.y(), 1.0);
    const Mat3& C = C_[m];
    const Vec3& t = t_[m];
    const Vec3 o = -C.transpose() * t;
    const Vec3 e = C.transpose() * ym;

    const double cos_par = u.dot(e) / (u.norm() * e.norm());
    const double parallax = std::acos(std::clamp(cos_par, -1.0, 1.0));
    if (parallax < opts_.min_parallax_deg * std::numbers::pi / 180.0) {
      throw Error(ErrorKind::LowParallax, "ray parallax below threshold");
    }

    Mat2 M;
    M << u.dot(u), -u.dot(e), -u.dot(e), e.dot(e);
    const Vec2 r(u.dot(o), -e.dot(o));
    const Vec2 st = M.inverse() * r;
    const Vec3 P = 0.5 * (st[0] * u + o + st[1] * e);
    if (P.z() <= cam_.z_min) throw Error(ErrorKind::BehindCamera, "intersection behind anchor camera");

    InverseDepthPoint out;
    out.theta = Vec3(P.x() / P.z(), P.y() / P.z(), 1.0 / P.z());

    if (dtheta) {
      const int np = num_params();
      // (dC)' v is column-wise dot products
      auto dCt_times = [&](int i, const Vec3& v) {
        Mat d(3, np);
        for (int j = 0; j < 3; ++j) d.row(j) = v.transpose() * dCcol_[i][j];
        return d;
      };
      const Mat d_o = -dCt_times(m, t) - C.transpose() * dt_[m];
      const Mat d_e = dCt_times(m, ym);
      const Mat2 Minv = M.inverse();
      Mat dP(3, np);
      for (int k = 0; k < np; ++k) {
        const double ude = u.dot(d_e.col(k));
        Mat2 dM;
        dM << 0.0, -ude, -ude, 2.0 * e.dot(d_e.col(k));
        const Vec2 dr(u.dot(d_o.col(k)), -d_e.col(k).dot(o) - e.dot(d_o.col(k)));
        const Vec2 dst = Minv * (dr - dM * st);
        dP.col(k) = 0.5 * (dst[0] * u + d_o.col(k) + dst[1] * e + st[1] * d_e.col(k));
      }
      const double iz = 1.0 / P.z();
      dtheta->resize(3, np);
      dtheta->row(0) = iz * dP.row(0) - P.x() * iz * iz * dP.row(2);
      dtheta->row(1) = iz * dP.row(1) - P.y() * iz * iz * dP.row(2);
      dtheta->row(2) = -iz * iz * dP.row(2);
    }
    return out;
  }

  /// Gauss-Newton refinement with the unrolled derivative.
  TriangulationResult refine(const InverseDepthPoint& theta0, const Mat& dtheta0) const {
    const int mm = num_frames();
    const int np = num_params();
    TriangulationResult res;
    Vec3 theta = theta0.theta;
    Mat dtheta = dtheta0.size() == 0 ? Mat::Zero(3, np) : dtheta0;

    const bool diff = opts_.differentiate;
    for (int it = 0; it < opts_.max_iter; ++it) {
      Mat3 N = Mat3::Zero();
      Vec3 b = Vec3::Zero();
      std::vector<Eigen::Matrix<double, 2, 3>> J(mm);
      std::vector<Vec2> phi(mm);
      std::vector<Mat23> D(mm);
      std::vector<Vec3> h(mm);
      for (int i = 0; i < mm; ++i) {
        h[i] = C_[i] * Vec3(theta[0], theta[1], 1.0) + theta[2] * t_[i];
        if (h[i].z() <= 0.0) throw Error(ErrorKind::BehindCamera, "point behind an observing camera");
        D[i] = projection_jacobian(h[i]);
        phi[i] = obs_[i].normalized - Vec2(h[i].x() / h[i].z(), h[i].y() / h[i].z());
        J[i] = -D[i] * G(i);
        N += J[i].transpose() * J[i];
        b += J[i].transpose() * phi[i];
      }
      check_condition(N);
      const Eigen::LDLT<Mat3> solver(N);
      const Vec3 delta = solver.solve(b);

      // tangent of the step
      Mat ddelta = Mat::Zero(3, np);
      std::vector<Mat> dh(mm);
      if (diff) {
        for (int i = 0; i < mm; ++i) dh[i] = h_tangent(i, theta, dtheta);
      }
      for (int k = 0; diff && k < np; ++k) {
        Mat3 dN = Mat3::Zero();
        Vec3 db = Vec3::Zero();
        for (int i = 0; i < mm; ++i) {
          const Vec3 dhk = dh[i].col(k);
          const Mat23 dD = projection_jacobian_tangent(h[i], dhk);
          Mat3 dG;
          dG << dCcol_[i][0].col(k), dCcol_[i][1].col(k), dt_[i].col(k);
          const Eigen::Matrix<double, 2, 3> dJ = -dD * G(i) - D[i] * dG;
          const Vec2 dphi = -D[i] * dhk;
          dN += dJ.transpose() * J[i] + J[i].transpose() * dJ;
          db += dJ.transpose() * phi[i] + J[i].transpose() * dphi;
        }
        ddelta.col(k) = solver.solve(db - dN * delta);
      }

      theta -= delta;
      dtheta -= ddelta;
      res.iterations = it + 1;
      if (delta.norm() < opts_.step_tol) {
        res.converged = true;
        break;
      }
    }

    if (!(theta[2] > 0.0)) throw Error(ErrorKind::BehindCamera, "converged inverse depth not positive");
    if (1.0 / theta[2] > opts_.max_depth) {
      throw Error(ErrorKind::DegenerateGeometry, "feature beyond maximum anchor depth");
    }
    res.theta = theta;
    res.dtheta_dposes = dtheta;
    res.p_star = A_[0].transpose() * (Vec3(theta[0], theta[1], 1.0) / theta[2]) + c_[0];

    double ss = 0.0;
    for (int i = 0; i < mm; ++i) {
      const Vec3 hi = C_[i] * Vec3(theta[0], theta[1], 1.0) + theta[2] * t_[i];
      const Vec2 pix = cam_.normalized_to_pixel(Vec2(hi.x() / hi.z(), hi.y() / hi.z()));
      ss += (pix - obs_[i].pixel).squaredNorm();
    }
    res.residual_rms = std::sqrt(ss / (2.0 * mm));
    return res;
  }

  /// Full pipeline: two-view init, then Gauss-Newton.
  TriangulationResult solve() const {
    Mat d0;
    const InverseDepthPoint theta0 = two_view_init(opts_.differentiate ? &d0 : nullptr);
    if (!opts_.include_init_derivative || !opts_.differentiate) d0 = Mat::Zero(3, num_params());
    return refine(theta0, d0);
  }

  /// Pixels predicted at the converged point, and their derivative w.r.t. the
  /// observing poses through both the direct pose dependence and theta*.
  FeaturePrediction predict(const TriangulationResult& res) const {
    const int mm = num_frames();
    FeaturePrediction out;
    out.pixels.resize(2 * mm);
    out.jacobian.resize(2 * mm, num_params());
    for (int i = 0; i < mm; ++i) {
      const Vec3 h = C_[i] * Vec3(res.theta[0], res.theta[1], 1.0) + res.theta[2] * t_[i];
      if (h.z() <= cam_.z_min * res.theta[2]) {
        throw Error(ErrorKind::BehindCamera, "feature behind an observing camera");
      }
      Mat2 dpix;
      out.pixels.segment<2>(2 * i) = cam_.normalized_to_pixel(Vec2(h.x() / h.z(), h.y() / h.z()), &dpix);
      out.jacobian.middleRows(2 * i, 2) = dpix * projection_jacobian(h) * h_tangent(i, res.theta, res.dtheta_dposes);
    }
    return out;
  }

  /// Predicted pixels only.
  Vec predict_pixels(const Vec3& theta) const {
    Vec out(2 * num_frames());
    for (int i = 0; i < num_frames(); ++i) {
      const Vec3 h = C_[i] * Vec3(theta[0], theta[1], 1.0) + theta[2] * t_[i];
      if (h.z() <= cam_.z_min * theta[2]) {
        throw Error(ErrorKind::BehindCamera, "feature behind an observing camera");
      }
      out.segment<2>(2 * i) = cam_.normalized_to_pixel(Vec2(h.x() / h.z(), h.y() / h.z()));
    }
    return out;
  }

  /// Gradient J' phi of the least-squares objective at theta.
  Vec3 gradient(const Vec3& theta) const {
    Vec3 b = Vec3::Zero();
    for (int i = 0; i < num_frames(); ++i) {
      const Vec3 h = C_[i] * Vec3(theta[0], theta[1], 1.0) + theta[2] * t_[i];
      const Mat23 D = projection_jacobian(h);
      const Vec2 phi = obs_[i].normalized - Vec2(h.x() / h.z(), h.y() / h.z());
      b += (-D * G(i)).transpose() * phi;
    }
    return b;
  }

  /// Normal matrix J'J and the partial derivative of J' phi w.r.t. the pose
  /// parameters at fixed theta.
  void gradient_partials(const Vec3& theta, Mat3* normal, Mat* dgrad_dposes) const {
    const int np = num_params();
    Mat3 N = Mat3::Zero();
    Mat dg = Mat::Zero(3, np);
    const Mat zero = Mat::Zero(3, np);
    for (int i = 0; i < num_frames(); ++i) {
      const Vec3 h = C_[i] * Vec3(theta[0], theta[1], 1.0) + theta[2] * t_[i];
      const Mat23 D = projection_jacobian(h);
      const Eigen::Matrix<double, 2, 3> J = -D * G(i);
      const Vec2 phi = obs_[i].normalized - Vec2(h.x() / h.z(), h.y() / h.z());
      N += J.transpose() * J;
      const Mat dh = h_tangent(i, theta, zero);
      for (int k = 0; k < np; ++k) {
        const Mat23 dD = projection_jacobian_tangent(h, dh.col(k));
        Mat3 dG;
        dG << dCcol_[i][0].col(k), dCcol_[i][1].col(k), dt_[i].col(k);
        const Eigen::Matrix<double, 2, 3> dJ = -dD * G(i) - D * dG;
        dg.col(k) += dJ.transpose() * phi + J.transpose() * (-D * dh.col(k));
      }
    }
    *normal = N;
    *dgrad_dposes = dg;
  }

  const CameraPose& anchor() const { return anchor_; }

 private:
  static Mat23 projection_jacobian(const Vec3& h) {
    const double iz = 1.0 / h.z();
    Mat23 d;
    d << iz, 0.0, -h.x() * iz * iz,
         0.0, iz, -h.y() * iz * iz;
    return d;
  }

  // Directional derivative of projection_jacobian(h) along dh.
  static Mat23 projection_jacobian_tangent(const Vec3& h, const Vec3& dh) {
    const double iz = 1.0 / h.z();
    const double iz2 = iz * iz;
    Mat23 d;
    d << -dh.z() * iz2, 0.0, -dh.x() * iz2 + 2.0 * h.x() * dh.z() * iz2 * iz,
         0.0, -dh.z() * iz2, -dh.y() * iz2 + 2.0 * h.y() * dh.z() * iz2 * iz;
    return d;
  }

  // d h_i / d theta = [C_i e1, C_i e2, t_i]
  Mat3 G(int i) const {
    Mat3 g;
    g << C_[i].col(0), C_[i].col(1), t_[i];
    return g;
  }

  // Total tangent of h_i given the tangent of theta.
  Mat h_tangent(int i, const Vec3& theta, const Mat& dtheta) const {
    Mat dh = dCcol_[i][0] * theta[0] + dCcol_[i][1] * theta[1] + dCcol_[i][2] + theta[2] * dt_[i];
    dh += C_[i].col(0) * dtheta.row(0) + C_[i].col(1) * dtheta.row(1) + t_[i] * dtheta.row(2);
    return dh;
  }

  void check_condition(const Mat3& N) const {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(N, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond < opts_.max_condition)) {
      throw Error(ErrorKind::DegenerateGeometry, "singular triangulation normal equations", cond);
    }
  }

  void build_geometry() {
    const int mm = num_frames();
    const int np = num_params();
    const Mat3 R_ic = quat::rotation(cam_.q_ic);
    A_.resize(mm);
    c_.resize(mm);
    std::vector<std::array<Mat3, 4>> dA(mm);
    std::vector<Eigen::Matrix<double, 3, 7>> dc(mm);
    for (int i = 0; i < mm; ++i) {
      const Vec4& q = obs_[i].q;
      const Mat3 R = quat::rotation(q);
      const auto dR = quat::rotation_derivatives(q);
      A_[i] = R_ic * R.transpose();
      c_[i] = obs_[i].p + R * cam_.p_ic;
      dc[i].setZero();
      dc[i].leftCols<3>().setIdentity();
      for (int j = 0; j < 4; ++j) {
        dA[i][j] = R_ic * dR[j].transpose();
        dc[i].col(3 + j) = dR[j] * cam_.p_ic;
      }
    }
    anchor_ = {A_[0], c_[0]};

    C_.resize(mm);
    t_.resize(mm);
    dCcol_.resize(mm);
    dt_.resize(mm);
    for (int i = 0; i < mm; ++i) {
      for (auto& m : dCcol_[i]) m = Mat::Zero(3, np);
      dt_[i] = Mat::Zero(3, np);
      if (i == 0) {
        C_[i].setIdentity();
        t_[i].setZero();
        continue;
      }
      C_[i] = A_[i] * A_[0].transpose();
      const Vec3 dcen = c_[0] - c_[i];
      t_[i] = A_[i] * dcen;
      for (int j = 0; j < 4; ++j) {
        // own orientation
        const Mat3 dCi = dA[i][j] * A_[0].transpose();
        // anchor orientation
        const Mat3 dC1 = A_[i] * dA[0][j].transpose();
        for (int col = 0; col < 3; ++col) {
          dCcol_[i][col].col(7 * i + 3 + j) = dCi.col(col);
          dCcol_[i][col].col(3 + j) = dC1.col(col);
        }
        dt_[i].col(7 * i + 3 + j) = dA[i][j] * dcen - A_[i] * dc[i].col(3 + j);
        dt_[i].col(3 + j) = A_[i] * dc[0].col(3 + j);
      }
      for (int j = 0; j < 3; ++j) {
        dt_[i].col(7 * i + j) = -A_[i] * dc[i].col(j);
        dt_[i].col(j) = A_[i] * dc[0].col(j);
      }
    }
  }

  std::vector<PoseObservation> obs_;
  CameraModel cam_;
  TriangulationOptions opts_;
  std::vector<Mat3> A_;
  std::vector<Vec3> c_;
  std::vector<Mat3> C_;
  std::vector<Vec3> t_;
  std::vector<std::array<Mat, 3>> dCcol_;
  std::vector<Mat> dt_;
  CameraPose anchor_;
};

/// Converts the local 3 x 7m tangent into a 3 x n sensitivity over the filter
/// state, given the state offset of each observing pose. Columns of non-observing
/// entries are zero.
inline Mat differentiate_triangulation(const TriangulationResult& res,
                                       const std::vector<int>& pose_offsets, int state_dim) {
  if (!res.converged) throw Error(ErrorKind::DegenerateGeometry, "triangulation did not converge");
  if (res.dtheta_dposes.cols() != 7 * static_cast<int>(pose_offsets.size())) {
    throw Error(ErrorKind::InvalidInput, "pose offset count does not match the track");
  }
  Mat out = Mat::Zero(3, state_dim);
  for (std::size_t i = 0; i < pose_offsets.size(); ++i) {
    out.middleCols(pose_offsets[i], 7) += res.dtheta_dposes.middleCols(7 * i, 7);
  }
  return out;
}

/// Scatters a local 2m x 7m Jacobian into state columns.
inline Mat scatter_pose_columns(const Mat& local, const std::vector<int>& pose_offsets, int state_dim) {
  Mat out = Mat::Zero(local.rows(), state_dim);
  for (std::size_t i = 0; i < pose_offsets.size(); ++i) {
    out.middleCols(pose_offsets[i], 7) += local.middleCols(7 * i, 7);
  }
  return out;
}

}  // namespace pivo
