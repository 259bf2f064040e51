#pragma once

// Pose-trail maintenance: at every camera frame the trail is shifted by one
// slot (linear Kalman prediction) and the current pose is imprinted into the
// freed front slot (linear Kalman update). Both steps act on the joint
// Gaussian, so every cross-covariance between the navigation state and the
// retained poses is kept.

#include <Eigen/Dense>

#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"

namespace pivo {

struct AugmentationConfig {
  int n_a = 10;
  double sigma_p_prior = 1e3;
  double sigma_q_prior = 1e3;
  double sigma_star = 1e-6;
};

/// Trail shift as an explicit linear prediction: nav identity, slot 1 cleared
/// with a wide prior, slot i <- slot i-1, oldest slot dropped.
inline FilterState shift_trail(const FilterState& state, const AugmentationConfig& cfg) {
  const int n = state.dim();
  if (cfg.n_a < 2 || n != layout::dimension(cfg.n_a)) {
    throw Error(ErrorKind::InvalidInput, "state dimension does not match trail length");
  }
  constexpr int N = layout::kNavDim;
  constexpr int P = layout::kPoseDim;
  const int kept = P * (cfg.n_a - 1);

  // A* x is a permutation-with-drop, so A* P A*' is a block copy.
  FilterState out;
  out.mean = Vec::Zero(n);
  out.mean.head<N>() = state.mean.head<N>();
  out.mean.segment(N + P, kept) = state.mean.segment(N, kept);

  out.cov = Mat::Zero(n, n);
  out.cov.topLeftCorner<N, N>() = state.cov.topLeftCorner<N, N>();
  out.cov.block(0, N + P, N, kept) = state.cov.block(0, N, N, kept);
  out.cov.block(N + P, 0, kept, N) = state.cov.block(N, 0, kept, N);
  out.cov.block(N + P, N + P, kept, kept) = state.cov.block(N, N, kept, kept);

  const double vp = cfg.sigma_p_prior * cfg.sigma_p_prior;
  const double vq = cfg.sigma_q_prior * cfg.sigma_q_prior;
  out.cov.diagonal().segment<3>(N).setConstant(vp);
  out.cov.diagonal().segment<4>(N + 3).setConstant(vq);
  return out;
}

/// Measurement matrix enforcing (p, q) - pi(1) = 0.
inline Mat imprint_matrix(int n_a) {
  Mat H = Mat::Zero(layout::kPoseDim, layout::dimension(n_a));
  H.block<7, 7>(0, 0).setIdentity();
  H.block<7, 7>(0, layout::kNavDim).setIdentity();
  H.block<7, 7>(0, layout::kNavDim) *= -1.0;
  return H;
}

inline FilterState imprint_pose(const FilterState& state, const AugmentationConfig& cfg) {
  if (state.dim() != layout::dimension(cfg.n_a)) {
    throw Error(ErrorKind::InvalidInput, "state dimension does not match trail length");
  }
  const Mat H = imprint_matrix(cfg.n_a);
  const Vec innovation = -(H * state.mean);
  const Mat R = cfg.sigma_star * cfg.sigma_star * Mat::Identity(7, 7);
  return ekf_update(state, innovation, H, R);
}

inline FilterState augment(const FilterState& state, const AugmentationConfig& cfg) {
  return imprint_pose(shift_trail(state, cfg), cfg);
}

}  // namespace pivo
