#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "pivo/errors.hpp"
#include "pivo/quaternion.hpp"

namespace pivo {

using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Pinhole camera with Brown-Conrady distortion (k1, k2, k3 radial; p1, p2 tangential)
/// and the rigid IMU-to-camera offset.
struct CameraModel {
  double fx = 500.0, fy = 500.0;
  double cx = 240.0, cy = 320.0;
  double k1 = 0.0, k2 = 0.0, k3 = 0.0;
  double p1 = 0.0, p2 = 0.0;
  Vec4 q_ic = quat::identity();  ///< rotation body -> camera
  Vec3 p_ic = Vec3::Zero();  ///< camera centre in the body frame, m
  int width = 480, height = 640;
  double z_min = 1e-3;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorKind::Config, "focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorKind::Config, "image size must be positive");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
      throw Error(ErrorKind::Config, "principal point outside the image");
    }
    if (std::abs(q_ic.norm() - 1.0) > 1e-6) throw Error(ErrorKind::Config, "q_ic is not unit norm");
  }

  bool inside(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0;
  }

  /// Distortion applied to normalized image coordinates.
  Vec2 distort(const Vec2& xy) const {
    const double x = xy.x(), y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    return Vec2(x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
                y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y);
  }

  Mat2 distort_jacobian(const Vec2& xy) const {
    const double x = xy.x(), y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    const double dradial_dr2 = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
    Mat2 j;
    j(0, 0) = radial + 2.0 * x * x * dradial_dr2 + 2.0 * p1 * y + 6.0 * p2 * x;
    j(0, 1) = 2.0 * x * y * dradial_dr2 + 2.0 * p1 * x + 2.0 * p2 * y;
    j(1, 0) = 2.0 * x * y * dradial_dr2 + 2.0 * p1 * x + 2.0 * p2 * y;
    j(1, 1) = radial + 2.0 * y * y * dradial_dr2 + 6.0 * p1 * y + 2.0 * p2 * x;
    return j;
  }

  /// Normalized (undistorted) coordinates to pixels, d pixel / d normalized in `jac`.
  Vec2 normalized_to_pixel(const Vec2& xy, Mat2* jac = nullptr) const {
    const Vec2 d = distort(xy);
    if (jac) *jac = Eigen::Vector2d(fx, fy).asDiagonal() * distort_jacobian(xy);
    return Vec2(fx * d.x() + cx, fy * d.y() + cy);
  }
};

/// Perspective projection of a camera-frame point to pixels.
inline Vec2 project(const Vec3& pt_cam, const CameraModel& cam, Mat23* jac = nullptr) {
  if (!pt_cam.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite point");
  if (pt_cam.z() <= cam.z_min) throw Error(ErrorKind::BehindCamera, "point behind camera");
  const double iz = 1.0 / pt_cam.z();
  const Vec2 xy(pt_cam.x() * iz, pt_cam.y() * iz);
  Mat2 dpix;
  const Vec2 pix = cam.normalized_to_pixel(xy, jac ? &dpix : nullptr);
  if (jac) {
    Mat23 dn;
    dn << iz, 0.0, -xy.x() * iz,
          0.0, iz, -xy.y() * iz;
    *jac = dpix * dn;
  }
  return pix;
}

/// Pixel to normalized image coordinates by Newton iteration on the distortion map.
inline Vec2 undistort(const Vec2& pixel, const CameraModel& cam, int max_iter = 20,
                      double tol = 1e-12) {
  if (!pixel.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite pixel");
  const Vec2 target((pixel.x() - cam.cx) / cam.fx, (pixel.y() - cam.cy) / cam.fy);
  Vec2 xy = target;
  for (int it = 0; it < max_iter; ++it) {
    const Vec2 err = cam.distort(xy) - target;
    const Vec2 step = cam.distort_jacobian(xy).partialPivLu().solve(err);
    if (!step.allFinite()) break;
    xy -= step;
    if (step.norm() < tol) break;
  }
  // a root past the fold of the radial polynomial is not the pixel's ray;
  // there both eigenvalues of the Jacobian turn negative
  const Mat2 J = cam.distort_jacobian(xy);
  if ((cam.distort(xy) - target).norm() < 1e-9 && J.determinant() > 0.0 && J.trace() > 0.0) return xy;
  throw Error(ErrorKind::DistortionInversion, "undistortion did not converge");
}

struct CameraPose {
  Mat3 R_cw;  ///< world -> camera rotation
  Vec3 center;  ///< camera centre in the world frame
};

/// Camera extrinsics from a device pose (p, q) and the IMU-camera offsets.
inline CameraPose camera_extrinsics(const Vec3& p, const Vec4& q, const CameraModel& cam) {
  if (!q.allFinite() || !(q.norm() > 0.0)) throw Error(ErrorKind::InvalidInput, "invalid quaternion");
  const Mat3 R = quat::rotation(q);
  return {quat::rotation(cam.q_ic) * R.transpose(), p + R * cam.p_ic};
}

inline Vec3 world_to_camera(const CameraPose& pose, const Vec3& pt_world) {
  return pose.R_cw * (pt_world - pose.center);
}

}  // namespace pivo
