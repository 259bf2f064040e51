#pragma once

#include <vector>

#include "pivo/quaternion.hpp"

namespace pivo {

struct TimedPose {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Vec4 q = quat::identity();
};

/// Estimated poses (logged at camera frames) with their position covariance blocks.
struct TrajectoryEstimate {
  std::vector<TimedPose> poses;
  std::vector<Mat3> position_cov;
};

}  // namespace pivo
