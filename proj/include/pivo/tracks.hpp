#pragma once

// Feature-track bookkeeping aligned with the pose trail. Tracks are strictly
// consecutive: a missed frame terminates a track, and a feature seen again
// later opens a new one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "pivo/camera.hpp"
#include "pivo/errors.hpp"

namespace pivo {

struct FeatureObservation {
  std::uint64_t feature_id = 0;
  double u = 0.0;
  double v = 0.0;
};

/// One camera frame with its feature observations (empty while occluded).
struct FrameEvent {
  double t = 0.0;
  std::vector<FeatureObservation> obs;
};

struct TrackPoint {
  long frame_index = 0;
  double u = 0.0;
  double v = 0.0;
};

struct FeatureTrack {
  std::uint64_t feature_id = 0;
  std::vector<TrackPoint> observations;
  /// Pose slot of the first observation when the track was handed out
  /// (0 = current navigation pose, i >= 1 = trail slot i).
  int anchor_slot = 0;

  int length() const { return static_cast<int>(observations.size()); }
  /// Pose slot of observation j; frames are consecutive so slots count down.
  int slot(int j) const { return anchor_slot - j; }
};

struct IngestResult {
  std::vector<std::uint64_t> continued;
  std::vector<std::uint64_t> opened;
  std::vector<std::uint64_t> terminated;
};

struct TrackPolicy {
  int n_a = 10;
  int m_min = 3;
};

class TrackManager {
 public:
  explicit TrackManager(const CameraModel& cam, TrackPolicy policy = {})
      : cam_(cam), policy_(policy) {}

  IngestResult ingest_frame(const std::vector<FeatureObservation>& observations, double frame_time) {
    if (frame_time < last_time_) {
      throw Error(ErrorKind::Stream, "frame time goes backwards");
    }
    last_time_ = frame_time;
    ++frame_;
    terminated_.clear();

    IngestResult res;
    std::map<std::uint64_t, TrackPoint> seen;
    for (const auto& o : observations) {
      if (!std::isfinite(o.u) || !std::isfinite(o.v) || !cam_.inside(o.u, o.v) ||
          seen.count(o.feature_id)) {
        ++dropped_;
        continue;
      }
      seen.emplace(o.feature_id, TrackPoint{frame_, o.u, o.v});
    }

    for (auto it = live_.begin(); it != live_.end();) {
      auto found = seen.find(it->first);
      // a full-length track cannot grow without its anchor leaving the trail
      if (found == seen.end() || it->second.length() >= policy_.n_a) {
        terminated_.push_back(std::move(it->second));
        res.terminated.push_back(it->first);
        it = live_.erase(it);
      } else {
        it->second.observations.push_back(found->second);
        res.continued.push_back(it->first);
        seen.erase(found);
        ++it;
      }
    }
    for (const auto& [id, pt] : seen) {
      FeatureTrack t;
      t.feature_id = id;
      t.observations.push_back(pt);
      live_.emplace(id, std::move(t));
      res.opened.push_back(id);
    }
    return res;
  }

  /// Tracks to propose this frame, ascending feature id: tracks terminated by the
  /// last ingest plus live tracks of full trail length. Each is handed out once.
  std::vector<FeatureTrack> ready_tracks() {
    std::vector<FeatureTrack> out;
    for (auto& t : terminated_) {
      if (t.observations.empty()) continue;
      if (consumed(t)) {
        used_.erase(t.feature_id);
      } else if (t.length() >= policy_.m_min) {
        out.push_back(with_slots(t));
      }
    }
    for (auto& [id, t] : live_) {
      if (t.length() == policy_.n_a && t.length() >= policy_.m_min && !consumed(t)) {
        out.push_back(with_slots(t));
        used_.emplace(id, t.observations.front().frame_index);
      }
    }
    std::sort(out.begin(), out.end(),
              [](const FeatureTrack& a, const FeatureTrack& b) { return a.feature_id < b.feature_id; });
    return out;
  }

  long frame_index() const { return frame_; }
  std::size_t dropped_observations() const { return dropped_; }
  std::size_t live_count() const { return live_.size(); }
  const std::map<std::uint64_t, FeatureTrack>& live_tracks() const { return live_; }
  const std::vector<FeatureTrack>& terminated_tracks() const { return terminated_; }

 private:
  bool consumed(const FeatureTrack& t) const {
    auto it = used_.find(t.feature_id);
    return it != used_.end() && it->second == t.observations.front().frame_index;
  }

  FeatureTrack with_slots(const FeatureTrack& t) const {
    FeatureTrack out = t;
    out.anchor_slot = static_cast<int>(frame_ - t.observations.front().frame_index);
    return out;
  }

  CameraModel cam_;
  TrackPolicy policy_;
  long frame_ = -1;
  double last_time_ = -std::numeric_limits<double>::infinity();
  std::map<std::uint64_t, FeatureTrack> live_;
  std::vector<FeatureTrack> terminated_;
  std::map<std::uint64_t, long> used_;  // feature id -> first frame of the handed-out track
  std::size_t dropped_ = 0;
};

}  // namespace pivo
