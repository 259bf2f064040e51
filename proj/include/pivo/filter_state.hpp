#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pivo/errors.hpp"
#include "pivo/quaternion.hpp"

namespace pivo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Index layout of the filter mean (0-based).
///
///   p 0..2 | q 3..6 | v 7..9 | b_a 10..12 | b_w 13..15 | diag(T_a) 16..18 |
///   pose trail pi(i) = (p_i, q_i) at 19 + 7 (i - 1) for i = 1..n_a
namespace layout {
inline constexpr int kPos = 0;
inline constexpr int kQuat = 3;
inline constexpr int kVel = 7;
inline constexpr int kAccBias = 10;
inline constexpr int kGyroBias = 13;
inline constexpr int kAccScale = 16;
inline constexpr int kNavDim = 19;
inline constexpr int kPoseDim = 7;

inline constexpr int dimension(int n_a) { return kNavDim + kPoseDim * n_a; }
/// Offset of trail slot `slot` (1-based); slot 0 is the current nav pose.
inline constexpr int pose_offset(int slot) { return slot == 0 ? 0 : kNavDim + kPoseDim * (slot - 1); }
}  // namespace layout

struct GaussianMoments {
  Vec mean;
  Mat cov;
};

struct FilterState {
  Vec mean;
  Mat cov;

  FilterState() = default;
  explicit FilterState(int n_a)
      : mean(Vec::Zero(layout::dimension(n_a))),
        cov(Mat::Zero(layout::dimension(n_a), layout::dimension(n_a))) {
    mean.segment<4>(layout::kQuat) = quat::identity();
    mean.segment<3>(layout::kAccScale).setOnes();
    for (int i = 1; i <= n_a; ++i) mean.segment<4>(layout::pose_offset(i) + 3) = quat::identity();
  }

  int dim() const { return static_cast<int>(mean.size()); }
  int trail_length() const { return (dim() - layout::kNavDim) / layout::kPoseDim; }

  Vec3 position() const { return mean.segment<3>(layout::kPos); }
  Vec4 orientation() const { return mean.segment<4>(layout::kQuat); }
  Vec3 velocity() const { return mean.segment<3>(layout::kVel); }
  Vec3 acc_bias() const { return mean.segment<3>(layout::kAccBias); }
  Vec3 gyro_bias() const { return mean.segment<3>(layout::kGyroBias); }
  Vec3 acc_scale() const { return mean.segment<3>(layout::kAccScale); }

  Vec3 pose_position(int slot) const { return mean.segment<3>(layout::pose_offset(slot)); }
  Vec4 pose_orientation(int slot) const { return mean.segment<4>(layout::pose_offset(slot) + 3); }

  Mat3 position_cov() const { return cov.block<3, 3>(layout::kPos, layout::kPos); }
};

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Renormalize every quaternion block (nav + trail) and enforce w >= 0.
///
/// A sign flip is a linear map on the state, so the matching covariance rows and
/// columns are negated too. Zeroed blocks (fresh trail slot priors) are left alone.
inline void renormalize_quaternions(FilterState& s) {
  if (s.dim() < layout::kNavDim) return;
  const int n_a = s.trail_length();
  for (int slot = 0; slot <= n_a; ++slot) {
    const int off = layout::pose_offset(slot) + 3;
    Vec4 q = s.mean.segment<4>(off);
    const double n = q.norm();
    if (!(n > 1e-12)) continue;
    q /= n;
    if (q[0] < 0.0) {
      q = -q;
      s.cov.middleRows(off, 4) *= -1.0;
      s.cov.middleCols(off, 4) *= -1.0;
    }
    s.mean.segment<4>(off) = q;
  }
}

/// mean <- mean_next, cov <- F cov F' + L Q L'.
inline FilterState ekf_predict(const FilterState& state, const Mat& F, const Vec& mean_next,
                               const Mat& L, const Mat& Q) {
  const int n = state.dim();
  if (F.rows() != n || F.cols() != n || mean_next.size() != n || L.rows() != n ||
      L.cols() != Q.rows() || Q.rows() != Q.cols()) {
    throw Error(ErrorKind::InvalidInput, "ekf_predict dimension mismatch");
  }
  FilterState out;
  out.mean = mean_next;
  out.cov = F * state.cov * F.transpose() + L * Q * L.transpose();
  symmetrize(out.cov);
  return out;
}

/// Kalman update with a Joseph-form covariance, followed by quaternion renormalization.
inline FilterState ekf_update(const FilterState& state, const Vec& innovation, const Mat& H,
                              const Mat& R, double max_condition = 1e12) {
  const int n = state.dim();
  const int m = static_cast<int>(innovation.size());
  if (H.rows() != m || H.cols() != n || R.rows() != m || R.cols() != m) {
    throw Error(ErrorKind::InvalidInput, "ekf_update dimension mismatch");
  }
  const Mat PHt = state.cov * H.transpose();
  Mat S = H * PHt + R;
  symmetrize(S);

  Eigen::SelfAdjointEigenSolver<Mat> eig(S, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const double condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!std::isfinite(condition) || condition > max_condition) {
    throw Error(ErrorKind::NumericalFailure, "innovation covariance is singular", condition);
  }

  Eigen::LLT<Mat> llt(S);
  const Mat K = llt.solve(PHt.transpose()).transpose();

  FilterState out;
  out.mean = state.mean + K * innovation;
  Mat A = Mat::Identity(n, n) - K * H;
  out.cov = A * state.cov * A.transpose() + K * R * K.transpose();
  symmetrize(out.cov);
  renormalize_quaternions(out);
  return out;
}

/// Mahalanobis distance r' S^-1 r with S = H P H' + R.
inline double mahalanobis(const FilterState& state, const Vec& innovation, const Mat& H,
                          const Mat& R) {
  Mat S = H * state.cov * H.transpose() + R;
  symmetrize(S);
  Eigen::LDLT<Mat> ldlt(S);
  return innovation.dot(ldlt.solve(innovation));
}

}  // namespace pivo
