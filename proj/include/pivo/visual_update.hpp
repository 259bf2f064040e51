#pragma once

// Per-track visual measurement update. The feature position is triangulated
// from the track and the poses in the state, and the predicted pixels are
// differentiated through the triangulation, so the update Jacobian couples all
// observing poses (and, through their cross-covariances, the whole state).

#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Dense>

#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/tracks.hpp"
#include "pivo/triangulation.hpp"

namespace pivo {

struct VisualUpdateConfig {
  double sigma_uv = 1.0;  ///< px
  int m_min = 3;
  double gate_confidence = 0.95;
  TriangulationOptions triangulation;
};

struct UpdateProposal {
  std::uint64_t feature_id = 0;
  Vec innovation;  ///< observed - predicted, px
  Mat H;
  Mat R;
  double mahalanobis = 0.0;
  int dof = 0;
  bool accepted = false;
  /// Set when the proposal could not be formed (triangulation failure etc.).
  bool valid = false;
  std::string reason;
  TriangulationResult triangulation;
};

inline double chi_square_quantile(double confidence, int dof) {
  boost::math::chi_squared_distribution<double> dist(static_cast<double>(dof));
  return boost::math::quantile(dist, confidence);
}

inline bool gate(const UpdateProposal& proposal, double confidence) {
  if (!proposal.valid) return false;
  return proposal.mahalanobis <= chi_square_quantile(confidence, proposal.dof);
}

/// Observations of `track` paired with the pose means they map to.
inline std::vector<PoseObservation> track_observations(const FeatureTrack& track,
                                                       const FilterState& state,
                                                       const CameraModel& cam,
                                                       std::vector<int>* pose_offsets) {
  std::vector<PoseObservation> obs;
  obs.reserve(track.observations.size());
  pose_offsets->clear();
  const int n_a = state.trail_length();
  for (int j = 0; j < track.length(); ++j) {
    const int slot = track.slot(j);
    if (slot < 0 || slot > n_a) throw Error(ErrorKind::InvalidInput, "track frame outside the pose trail");
    const auto& tp = track.observations[j];
    PoseObservation o;
    o.p = state.pose_position(slot);
    o.q = state.pose_orientation(slot);
    o.pixel = Vec2(tp.u, tp.v);
    o.normalized = undistort(o.pixel, cam);
    obs.push_back(o);
    pose_offsets->push_back(layout::pose_offset(slot));
  }
  return obs;
}

inline UpdateProposal build_proposal(const FeatureTrack& track, const FilterState& state,
                                     const CameraModel& cam, const VisualUpdateConfig& cfg) {
  UpdateProposal prop;
  prop.feature_id = track.feature_id;
  prop.dof = 2 * track.length();
  if (track.length() < std::max(cfg.m_min, 2)) {
    prop.reason = "track too short";
    return prop;
  }
  try {
    std::vector<int> offsets;
    const FeatureSolver solver(track_observations(track, state, cam, &offsets), cam, cfg.triangulation);
    prop.triangulation = solver.solve();
    if (!prop.triangulation.converged) {
      prop.reason = "triangulation did not converge";
      return prop;
    }
    const FeaturePrediction pred = solver.predict(prop.triangulation);
    Vec observed(2 * track.length());
    for (int j = 0; j < track.length(); ++j) {
      observed.segment<2>(2 * j) = Vec2(track.observations[j].u, track.observations[j].v);
    }
    prop.innovation = observed - pred.pixels;
    prop.H = scatter_pose_columns(pred.jacobian, offsets, state.dim());
    prop.R = cfg.sigma_uv * cfg.sigma_uv * Mat::Identity(prop.dof, prop.dof);
    prop.mahalanobis = mahalanobis(state, prop.innovation, prop.H, prop.R);
    prop.valid = std::isfinite(prop.mahalanobis) && prop.mahalanobis >= 0.0;
    if (!prop.valid) {
      prop.reason = "innovation covariance not positive definite";
      return prop;
    }
    prop.accepted = gate(prop, cfg.gate_confidence);
    if (!prop.accepted) prop.reason = "chi-square gate";
  } catch (const Error& e) {
    prop.valid = false;
    prop.accepted = false;
    prop.reason = e.what();
  }
  return prop;
}

/// EKF update with an accepted proposal. On numerical failure the state is
/// returned unchanged and `applied` is cleared.
inline FilterState apply_update(const FilterState& state, const UpdateProposal& proposal,
                                bool* applied = nullptr) {
  if (applied) *applied = false;
  if (!proposal.accepted) return state;
  try {
    FilterState out = ekf_update(state, proposal.innovation, proposal.H, proposal.R);
    if (!out.mean.allFinite() || !out.cov.allFinite()) return state;
    if (applied) *applied = true;
    return out;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NumericalFailure) throw;
    return state;
  }
}

}  // namespace pivo
