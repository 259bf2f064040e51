#pragma once

// Sequential estimation loop. Per IMU sample: propagate, then a zero-velocity
// update when the recent window is quiet. Per camera frame (snapped to the
// latest IMU sample at or before it): ingest observations, update with every
// ready track in ascending id order, then augment the pose trail and log the
// pose.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pivo/augmentation.hpp"
#include "pivo/camera.hpp"
#include "pivo/errors.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/imu.hpp"
#include "pivo/tracks.hpp"
#include "pivo/trajectory.hpp"
#include "pivo/visual_update.hpp"

namespace pivo {

struct EstimatorConfig {
  ProcessNoiseConfig noise;
  AugmentationConfig augmentation;
  VisualUpdateConfig visual;
  InitConfig init;
  StationaryConfig stationary;
  bool zupt = true;
  double r_zupt = 1e-4;
  /// Chi-square confidence for the zero-velocity innovation; <= 0 disables the gate.
  double zupt_gate = 0.95;
  /// Soft speed prior, disabled when max_speed <= 0.
  double max_speed = 0.0;
  double r_speed = 0.01;
  /// Slack when snapping frame times onto the IMU clock, s.
  double snap_tolerance = 1e-6;
};

struct StageTimings {
  double propagate = 0.0;
  double zupt = 0.0;
  double tracking = 0.0;
  double visual_update = 0.0;
  double augmentation = 0.0;
};

struct RunSummary {
  std::size_t imu_samples = 0;
  std::size_t frames = 0;
  std::size_t frames_skipped = 0;
  std::size_t observations_dropped = 0;
  std::size_t tracks_proposed = 0;
  std::size_t updates_applied = 0;
  std::size_t gate_rejections = 0;
  std::size_t invalid_proposals = 0;
  std::size_t update_failures = 0;
  std::size_t zupt_updates = 0;
  std::size_t zupt_rejections = 0;
  std::size_t speed_updates = 0;
  StageTimings seconds;

  double gate_rejection_rate() const {
    const std::size_t gated = updates_applied + update_failures + gate_rejections;
    return gated ? static_cast<double>(gate_rejections) / static_cast<double>(gated) : 0.0;
  }

  nlohmann::json to_json() const {
    return {{"imu_samples", imu_samples},
            {"frames", frames},
            {"frames_skipped", frames_skipped},
            {"observations_dropped", observations_dropped},
            {"tracks_proposed", tracks_proposed},
            {"updates_applied", updates_applied},
            {"gate_rejections", gate_rejections},
            {"gate_rejection_rate", gate_rejection_rate()},
            {"invalid_proposals", invalid_proposals},
            {"update_failures", update_failures},
            {"zupt_updates", zupt_updates},
            {"zupt_rejections", zupt_rejections},
            {"speed_updates", speed_updates},
            {"timing_s",
             {{"propagate", seconds.propagate},
              {"zupt", seconds.zupt},
              {"tracking", seconds.tracking},
              {"visual_update", seconds.visual_update},
              {"augmentation", seconds.augmentation}}}};
  }
};

class Estimator {
 public:
  Estimator(const CameraModel& cam, EstimatorConfig cfg)
      : cam_(cam), cfg_(std::move(cfg)), tracks_(cam, TrackPolicy{cfg_.augmentation.n_a, cfg_.visual.m_min}) {
    cam_.validate();
    if (cfg_.augmentation.n_a < 2) throw Error(ErrorKind::Config, "n_a must be at least 2");
    cfg_.visual.m_min = std::max(cfg_.visual.m_min, 2);
  }

  /// Aligns gravity on the leading samples and fills the trail with the initial pose.
  void initialize(std::span<const ImuSample> imu) {
    if (imu.empty()) throw Error(ErrorKind::InsufficientData, "empty IMU stream");
    state_ = initial_state(imu, cfg_.augmentation.n_a, cfg_.noise, cfg_.init);
    for (int i = 0; i < cfg_.augmentation.n_a; ++i) state_ = augment(state_, cfg_.augmentation);
    window_.clear();
    window_.push_back(imu.front());
    last_imu_ = imu.front();
    initialized_ = true;
    ++summary_.imu_samples;
  }

  void process_imu(const ImuSample& s) {
    require_init();
    const double dt = s.t - last_imu_.t;
    auto t0 = Clock::now();
    state_ = propagate(state_, s, dt, cfg_.noise);
    summary_.seconds.propagate += elapsed(t0);
    last_imu_ = s;
    ++summary_.imu_samples;

    window_.push_back(s);
    while (window_.size() > 2 && s.t - window_[1].t >= cfg_.stationary.window - 1e-9) window_.erase(window_.begin());
    t0 = Clock::now();
    if (cfg_.zupt && s.t - window_.front().t >= cfg_.stationary.window - 1e-9 &&
        detect_stationary(std::span<const ImuSample>(window_), cfg_.stationary)) {
      if (zupt_passes_gate()) {
        state_ = zupt_update(state_, cfg_.r_zupt);
        ++summary_.zupt_updates;
      } else {
        ++summary_.zupt_rejections;
      }
    }
    if (cfg_.max_speed > 0.0 && state_.velocity().norm() > cfg_.max_speed) {
      state_ = speed_prior_update(state_, cfg_.max_speed, cfg_.r_speed);
      ++summary_.speed_updates;
    }
    summary_.seconds.zupt += elapsed(t0);
  }

  /// Frame at the current IMU time: track bookkeeping, visual updates, augmentation.
  void process_frame(const FrameEvent& frame) {
    require_init();
    auto t0 = Clock::now();
    tracks_.ingest_frame(frame.obs, frame.t);
    summary_.observations_dropped = tracks_.dropped_observations();
    std::vector<FeatureTrack> ready = tracks_.ready_tracks();
    summary_.seconds.tracking += elapsed(t0);

    t0 = Clock::now();
    for (const FeatureTrack& track : ready) {
      ++summary_.tracks_proposed;
      const UpdateProposal prop = build_proposal(track, state_, cam_, cfg_.visual);
      if (!prop.valid) {
        ++summary_.invalid_proposals;
        continue;
      }
      if (!prop.accepted) {
        ++summary_.gate_rejections;
        continue;
      }
      bool applied = false;
      state_ = apply_update(state_, prop, &applied);
      if (applied) {
        ++summary_.updates_applied;
      } else {
        ++summary_.update_failures;
      }
    }
    summary_.seconds.visual_update += elapsed(t0);

    t0 = Clock::now();
    state_ = augment(state_, cfg_.augmentation);
    summary_.seconds.augmentation += elapsed(t0);
    ++summary_.frames;

    trajectory_.poses.push_back({last_imu_.t, state_.position(), state_.orientation()});
    trajectory_.position_cov.push_back(state_.position_cov());
  }

  /// Whole-stream run. Frames are processed after every IMU sample at or
  /// before their timestamp; frames outside the IMU span are skipped.
  void run(std::span<const ImuSample> imu, std::span<const FrameEvent> frames) {
    initialize(imu);
    std::size_t k = 1;
    for (const FrameEvent& f : frames) {
      if (f.t < imu.front().t - cfg_.snap_tolerance || f.t > imu.back().t + cfg_.snap_tolerance) {
        ++summary_.frames_skipped;
        continue;
      }
      while (k < imu.size() && imu[k].t <= f.t + cfg_.snap_tolerance) process_imu(imu[k++]);
      process_frame(f);
    }
    while (k < imu.size()) process_imu(imu[k++]);
  }

  const FilterState& state() const { return state_; }
  const TrajectoryEstimate& trajectory() const { return trajectory_; }
  const RunSummary& summary() const { return summary_; }
  const EstimatorConfig& config() const { return cfg_; }
  double time() const { return last_imu_.t; }

 private:
  using Clock = std::chrono::steady_clock;
  static double elapsed(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }
  // A smooth motion can look quiet to the variance detector; the velocity
  // estimate then disagrees with the pseudo-measurement and is gated out.
  bool zupt_passes_gate() const {
    if (cfg_.zupt_gate <= 0.0) return true;
    Mat H = Mat::Zero(3, state_.dim());
    H.block<3, 3>(0, layout::kVel).setIdentity();
    const double d2 = mahalanobis(state_, -state_.velocity(), H, cfg_.r_zupt * Mat::Identity(3, 3));
    return d2 <= chi_square_quantile(cfg_.zupt_gate, 3);
  }

  void require_init() const {
    if (!initialized_) throw Error(ErrorKind::InvalidInput, "estimator not initialized");
  }

  CameraModel cam_;
  EstimatorConfig cfg_;
  TrackManager tracks_;
  FilterState state_;
  ImuSample last_imu_;
  std::vector<ImuSample> window_;
  TrajectoryEstimate trajectory_;
  RunSummary summary_;
  bool initialized_ = false;
};

}  // namespace pivo
