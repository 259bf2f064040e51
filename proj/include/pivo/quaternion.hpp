#pragma once

// Quaternion conventions used throughout pivo:
//   - scalar first, q = (w, x, y, z), Hamilton product;
//   - R(q) rotates body-frame vectors into the world frame;
//   - the gyro increment is applied on the right, q_k = q_{k-1} (x) exp(phi).
//
// Quaternions are stored as plain Eigen::Vector4d so that they live inside the
// filter mean vector without conversion.

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pivo/errors.hpp"

namespace pivo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat43 = Eigen::Matrix<double, 4, 3>;

namespace quat {

inline Vec4 identity() { return Vec4(1.0, 0.0, 0.0, 0.0); }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Vec4 conjugate(const Vec4& q) { return Vec4(q[0], -q[1], -q[2], -q[3]); }

inline Vec4 multiply(const Vec4& a, const Vec4& b) {
  return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Normalize and force w >= 0 (R(q) is sign invariant).
inline Vec4 normalized(const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorKind::InvalidInput, "cannot normalize a zero or non-finite quaternion");
  }
  Vec4 out = q / n;
  if (out[0] < 0.0) out = -out;
  return out;
}

/// Unit quaternion for the rotation vector `phi` (axis * angle).
inline Vec4 from_rotation_vector(const Vec3& phi) {
  const double angle = phi.norm();
  if (angle < 1e-12) return Vec4(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z()).normalized();
  const Vec3 axis = phi / angle;
  const double s = std::sin(0.5 * angle);
  return Vec4(std::cos(0.5 * angle), s * axis.x(), s * axis.y(), s * axis.z());
}

/// Rotation vector of a unit quaternion, angle in [0, pi].
inline Vec3 to_rotation_vector(const Vec4& q_in) {
  Vec4 q = q_in.normalized();
  if (q[0] < 0.0) q = -q;
  const Vec3 v = q.tail<3>();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q[0]);
  return v * (angle / s);
}

/// Homogeneous quadratic rotation form; equals R(q) * |q|^2.
inline Mat3 rotation_homogeneous(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
       2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
       2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return r;
}

/// R(q / |q|). Used inside measurement and dynamic models, where the
/// quaternion may drift slightly off the unit sphere between renormalizations.
inline Mat3 rotation(const Vec4& q) { return rotation_homogeneous(q) / q.squaredNorm(); }

/// Derivatives of R(q / |q|) with respect to (w, x, y, z).
inline std::array<Mat3, 4> rotation_derivatives(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> dh;
  dh[0] << w, -z, y,
           z, w, -x,
           -y, x, w;
  dh[1] << x, y, z,
           y, -x, -w,
           z, w, -x;
  dh[2] << -y, x, w,
           x, y, z,
           -w, z, -y;
  dh[3] << -z, -w, x,
           w, -z, y,
           x, y, z;
  const double n2 = q.squaredNorm();
  const Mat3 rh = rotation_homogeneous(q);
  std::array<Mat3, 4> out;
  for (int j = 0; j < 4; ++j) {
    out[j] = (2.0 * dh[j]) / n2 - rh * (2.0 * q[j] / (n2 * n2));
  }
  return out;
}

/// d(R(q/|q|) a)/dq as a 3x4 matrix.
inline Mat34 rotate_jacobian(const Vec4& q, const Vec3& a) {
  const auto d = rotation_derivatives(q);
  Mat34 j;
  for (int k = 0; k < 4; ++k) j.col(k) = d[k] * a;
  return j;
}

/// Public rotation-matrix conversion; rejects non-unit input.
inline Mat3 to_rotation_matrix(const Vec4& q) {
  if (!q.allFinite() || std::abs(q.norm() - 1.0) > 1e-6) {
    throw Error(ErrorKind::InvalidInput, "quaternion is not unit norm");
  }
  return rotation_homogeneous(q);
}

/// Quaternion update matrix Omega(phi): Omega(phi) q == q (x) exp(phi).
inline Mat4 omega_matrix(const Vec3& phi) {
  if (!phi.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite rotation increment");
  const double r = phi.norm();
  const double c = std::cos(0.5 * r);
  // sin(r/2)/r with a series branch near zero
  const double s = r < 1e-4 ? 0.5 - r * r / 48.0 : std::sin(0.5 * r) / r;
  Mat4 w;
  w << 0.0, -phi.x(), -phi.y(), -phi.z(),
       phi.x(), 0.0, phi.z(), -phi.y(),
       phi.y(), -phi.z(), 0.0, phi.x(),
       phi.z(), phi.y(), -phi.x(), 0.0;
  return c * Mat4::Identity() + s * w;
}

/// d(Omega(phi) q)/dphi, a 4x3 matrix.
inline Mat43 omega_jacobian(const Vec3& phi, const Vec4& q) {
  const double r = phi.norm();
  double s, ds_over_r, half_sin_over_r;
  if (r < 1e-4) {
    s = 0.5 - r * r / 48.0;
    ds_over_r = -1.0 / 24.0 + r * r / 960.0;
    half_sin_over_r = 0.25 - r * r / 96.0;
  } else {
    s = std::sin(0.5 * r) / r;
    ds_over_r = (0.5 * r * std::cos(0.5 * r) - std::sin(0.5 * r)) / (r * r * r);
    half_sin_over_r = 0.5 * std::sin(0.5 * r) / r;
  }
  // exp(phi) = (cos(r/2), s(r) phi)
  Eigen::Matrix<double, 4, 3> de;
  de.row(0) = -half_sin_over_r * phi.transpose();
  de.bottomRows<3>() = s * Mat3::Identity() + ds_over_r * phi * phi.transpose();
  // q (x) e is linear in e: left-multiplication matrix of q
  Mat4 lq;
  lq << q[0], -q[1], -q[2], -q[3],
        q[1], q[0], -q[3], q[2],
        q[2], q[3], q[0], -q[1],
        q[3], -q[2], q[1], q[0];
  return lq * de;
}

/// Shortest-arc rotation taking unit direction `from` onto `to`.
inline Vec4 from_two_vectors(const Vec3& from, const Vec3& to) {
  const Eigen::Quaterniond e = Eigen::Quaterniond::FromTwoVectors(from, to);
  return normalized(Vec4(e.w(), e.x(), e.y(), e.z()));
}

/// Z-Y-X Euler (yaw, pitch, roll) to quaternion.
inline Vec4 from_euler(double yaw, double pitch, double roll) {
  const Vec4 qz(std::cos(0.5 * yaw), 0.0, 0.0, std::sin(0.5 * yaw));
  const Vec4 qy(std::cos(0.5 * pitch), 0.0, std::sin(0.5 * pitch), 0.0);
  const Vec4 qx(std::cos(0.5 * roll), std::sin(0.5 * roll), 0.0, 0.0);
  return multiply(multiply(qz, qy), qx);
}

/// Jacobian of q w.r.t. a small world-frame rotation applied on the left.
inline Mat43 world_perturbation_jacobian(const Vec4& q) {
  Mat43 g;
  g.row(0) = -0.5 * q.tail<3>().transpose();
  g.bottomRows<3>() = 0.5 * (q[0] * Mat3::Identity() - skew(q.tail<3>()));
  return g;
}

}  // namespace quat
}  // namespace pivo
