#pragma once

// Trajectory alignment and absolute trajectory error.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pivo/errors.hpp"
#include "pivo/quaternion.hpp"
#include "pivo/trajectory.hpp"

namespace pivo {

enum class AlignMode { Rigid3d, Rigid2d };

inline AlignMode align_mode_from_string(const std::string& s) {
  if (s == "rigid3d") return AlignMode::Rigid3d;
  if (s == "rigid2d") return AlignMode::Rigid2d;
  throw Error(ErrorKind::Config, "unknown alignment mode '" + s + "'");
}

inline const char* to_string(AlignMode m) { return m == AlignMode::Rigid3d ? "rigid3d" : "rigid2d"; }

struct AlignmentResult {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double scale = 1.0;
  AlignMode mode = AlignMode::Rigid3d;
  std::vector<double> residuals;  ///< |s R est + t - ref| per matched pair, m

  Vec3 apply(const Vec3& x) const { return scale * R * x + t; }
};

struct MatchedPairs {
  std::vector<std::size_t> est, ref;
  std::size_t size() const { return est.size(); }
};

/// Nearest reference timestamp for each estimate pose, within `tolerance` s.
inline MatchedPairs match_timestamps(const std::vector<TimedPose>& est, const std::vector<TimedPose>& ref,
                                     double tolerance = 0.02) {
  MatchedPairs m;
  std::vector<double> times(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) times[i] = ref[i].t;
  if (!std::is_sorted(times.begin(), times.end())) {
    throw Error(ErrorKind::InvalidInput, "reference trajectory timestamps are not sorted");
  }
  for (std::size_t i = 0; i < est.size(); ++i) {
    const auto it = std::lower_bound(times.begin(), times.end(), est[i].t);
    std::size_t best = ref.size();
    double best_dt = tolerance;
    for (auto c : {it, it == times.begin() ? it : it - 1}) {
      if (c == times.end()) continue;
      const double dt = std::abs(*c - est[i].t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<std::size_t>(c - times.begin());
      }
    }
    if (best < ref.size()) {
      m.est.push_back(i);
      m.ref.push_back(best);
    }
  }
  return m;
}

/// Least-squares fit ref ~ s R est + t. Scale is fixed to 1 unless
/// `with_scale` (diagnostics only); rigid2d restricts R to a rotation about z.
inline AlignmentResult align_points(const std::vector<Vec3>& est, const std::vector<Vec3>& ref, AlignMode mode,
                                    bool with_scale = false) {
  if (est.size() != ref.size()) throw Error(ErrorKind::InvalidInput, "point sets differ in size");
  if (est.size() < 3) throw Error(ErrorKind::InsufficientData, "alignment needs at least 3 matched poses");
  const double n = static_cast<double>(est.size());
  Vec3 me = Vec3::Zero(), mr = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mr += ref[i];
  }
  me /= n;
  mr /= n;
  Mat3 C = Mat3::Zero();
  double var_e = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    C += (ref[i] - mr) * (est[i] - me).transpose();
    var_e += (est[i] - me).squaredNorm();
  }

  AlignmentResult a;
  a.mode = mode;
  if (mode == AlignMode::Rigid3d) {
    Eigen::JacobiSVD<Mat3> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 S = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) S(2, 2) = -1.0;
    a.R = svd.matrixU() * S * svd.matrixV().transpose();
    if (with_scale && var_e > 0.0) a.scale = (svd.singularValues().asDiagonal() * S).trace() / var_e;
  } else {
    const double num = C(1, 0) - C(0, 1);
    const double den = C(0, 0) + C(1, 1);
    const double yaw = std::atan2(num, den);
    a.R = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    if (with_scale && var_e > 0.0) a.scale = (a.R.transpose() * C).trace() / var_e;
  }
  a.t = mr - a.scale * a.R * me;
  for (std::size_t i = 0; i < est.size(); ++i) a.residuals.push_back((a.apply(est[i]) - ref[i]).norm());
  return a;
}

inline AlignmentResult align(const std::vector<TimedPose>& est, const std::vector<TimedPose>& ref, AlignMode mode,
                             double tolerance = 0.02, bool with_scale = false) {
  const MatchedPairs m = match_timestamps(est, ref, tolerance);
  std::vector<Vec3> pe, pr;
  for (std::size_t i = 0; i < m.size(); ++i) {
    pe.push_back(est[m.est[i]].p);
    pr.push_back(ref[m.ref[i]].p);
  }
  return align_points(pe, pr, mode, with_scale);
}

struct AteResult {
  double rmse = 0.0;
  double median = 0.0;
  std::size_t n_matched = 0;
  AlignMode mode = AlignMode::Rigid3d;
  std::vector<double> t;  ///< estimate timestamps of matched poses
  std::vector<double> errors;
};

inline AteResult ate_from_errors(std::vector<double> errors) {
  AteResult r;
  r.n_matched = errors.size();
  if (errors.empty()) return r;
  double ss = 0.0;
  for (double e : errors) ss += e * e;
  r.rmse = std::sqrt(ss / static_cast<double>(errors.size()));
  r.errors = errors;
  std::sort(errors.begin(), errors.end());
  const std::size_t k = errors.size();
  r.median = k % 2 ? errors[k / 2] : 0.5 * (errors[k / 2 - 1] + errors[k / 2]);
  return r;
}

/// Position errors of the matched poses after applying `alignment` to the estimate.
inline AteResult ate(const std::vector<TimedPose>& est, const std::vector<TimedPose>& ref,
                     const AlignmentResult& alignment, double tolerance = 0.02) {
  const MatchedPairs m = match_timestamps(est, ref, tolerance);
  std::vector<double> err;
  std::vector<double> times;
  for (std::size_t i = 0; i < m.size(); ++i) {
    err.push_back((alignment.apply(est[m.est[i]].p) - ref[m.ref[i]].p).norm());
    times.push_back(est[m.est[i]].t);
  }
  AteResult r = ate_from_errors(std::move(err));
  r.mode = alignment.mode;
  r.t = std::move(times);
  return r;
}

/// Align and evaluate in one go.
inline AteResult evaluate_trajectory(const std::vector<TimedPose>& est, const std::vector<TimedPose>& ref,
                                     AlignMode mode, double tolerance = 0.02) {
  return ate(est, ref, align(est, ref, mode, tolerance), tolerance);
}

inline nlohmann::json ate_report(const AteResult& r) {
  return {{"rmse", r.rmse}, {"median", r.median}, {"n_matched", r.n_matched}, {"mode", to_string(r.mode)}};
}

inline void write_error_csv(const std::string& path, const AteResult& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write '" + path + "'");
  out << "t,error\n";
  char buf[128];
  for (std::size_t i = 0; i < r.errors.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9f,%.9g\n", r.t[i], r.errors[i]);
    out << buf;
  }
}

/// Length of the polyline through the poses.
inline double path_length(const std::vector<TimedPose>& poses) {
  double len = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i) len += (poses[i].p - poses[i - 1].p).norm();
  return len;
}

}  // namespace pivo
