#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace pivo {
namespace {

using testing::numeric_jacobian;
using testing::random_quaternion;
using testing::random_vec3;
using testing::relative_error;

CameraModel pinhole() {
  CameraModel c;
  c.fx = c.fy = 400.0;
  c.cx = 320.0;
  c.cy = 240.0;
  c.width = 640;
  c.height = 480;
  return c;
}

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const CameraModel c = pinhole();
  EXPECT_EQ(project(Vec3(0, 0, 1), c), Vec2(320.0, 240.0));
}

TEST(Project, PinholeFormula) {
  EXPECT_DOUBLE_EQ(project(Vec3(1, 0, 2), pinhole()).x(), 520.0);
}

TEST(Project, BehindCameraThrows) {
  try {
    project(Vec3(0, 0, -1), pinhole());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BehindCamera);
  }
  EXPECT_THROW(project(Vec3(0, 0, 5e-4), pinhole()), Error);
}

TEST(Project, StrongRadialRoundTrip) {
  CameraModel c = pinhole();
  c.k1 = -0.3;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const Vec2 xy(u(rng), u(rng));
    const Vec2 back = undistort(project(Vec3(xy.x(), xy.y(), 1.0), c), c);
    EXPECT_LT((back - xy).norm(), 1e-9);
  }
}

TEST(Project, JacobianMatchesFiniteDifferences) {
  const CameraModel c = default_sim_camera();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_real_distribution<double> z(1.0, 20.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double depth = z(rng);
    const Vec3 p(u(rng) * depth, u(rng) * depth, depth);
    Mat23 J;
    project(p, c, &J);
    const Mat num = numeric_jacobian([&](const Vec& x) -> Vec { return project(Vec3(x), c); }, p);
    worst = std::max(worst, relative_error(J, num));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Undistort, PrincipalPointIsOrigin) {
  const CameraModel c = default_sim_camera();
  EXPECT_LT(undistort(Vec2(c.cx, c.cy), c).norm(), 1e-15);
}

TEST(Undistort, RoundTripOverImageGrid) {
  const CameraModel c = default_sim_camera();
  // central 90% of the image area
  const double mu = 0.5 * (1.0 - std::sqrt(0.9)) * c.width;
  const double mv = 0.5 * (1.0 - std::sqrt(0.9)) * c.height;
  double worst = 0.0;
  for (int i = 0; i <= 40; ++i) {
    for (int j = 0; j <= 40; ++j) {
      const Vec2 px(mu + (c.width - 1 - 2 * mu) * i / 40.0, mv + (c.height - 1 - 2 * mv) * j / 40.0);
      const Vec2 xy = undistort(px, c);
      worst = std::max(worst, (c.normalized_to_pixel(xy) - px).norm());
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Undistort, ExtremeCornerWithStrongDistortion) {
  CameraModel c = pinhole();
  c.k1 = -0.3;
  c.k2 = 0.08;
  c.p1 = 1e-3;
  c.p2 = -1e-3;
  const Vec2 corner(0.0, 0.0);
  const Vec2 xy = undistort(corner, c, 20, 1e-12);
  EXPECT_LT((c.normalized_to_pixel(xy) - corner).norm(), 1e-9);
}

TEST(Undistort, RejectsNonFinite) {
  EXPECT_THROW(undistort(Vec2(std::nan(""), 1.0), pinhole()), Error);
}

TEST(Undistort, ReportsNonConvergence) {
  CameraModel c = pinhole();
  c.k1 = -2.0;  // the distortion map folds over well inside this pixel
  try {
    undistort(Vec2(5000.0, 5000.0), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DistortionInversion);
  }
}

TEST(Extrinsics, IdentityOffsetsAndPose) {
  const CameraPose p = camera_extrinsics(Vec3::Zero(), quat::identity(), pinhole());
  EXPECT_TRUE(p.R_cw.isApprox(Mat3::Identity(), 0.0));
  EXPECT_EQ(p.center, Vec3::Zero());
}

TEST(Extrinsics, LeverArm) {
  CameraModel c = pinhole();
  c.p_ic = Vec3(0.1, 0, 0);
  const CameraPose p = camera_extrinsics(Vec3(1, 2, 3), quat::identity(), c);
  EXPECT_LT((p.center - Vec3(1.1, 2, 3)).norm(), 1e-15);
}

TEST(Extrinsics, OpticalAxisPointProjectsToPrincipalPoint) {
  std::mt19937_64 rng(3);
  CameraModel c = default_sim_camera();
  for (int i = 0; i < 50; ++i) {
    const Vec3 p = random_vec3(rng, 3.0);
    const Vec4 q = random_quaternion(rng);
    const CameraPose pose = camera_extrinsics(p, q, c);
    const Vec3 axis = pose.R_cw.transpose() * Vec3::UnitZ();
    const Vec3 world = pose.center + 4.0 * axis;
    EXPECT_LT((project(world_to_camera(pose, world), c) - Vec2(c.cx, c.cy)).norm(), 1e-9);
  }
}

TEST(CameraModel, ValidateRejectsBadIntrinsics) {
  CameraModel c = pinhole();
  c.fx = -1;
  EXPECT_THROW(c.validate(), Error);
  c = pinhole();
  c.cx = 700;
  EXPECT_THROW(c.validate(), Error);
  c = pinhole();
  c.q_ic = Vec4(1, 1, 0, 0);
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(default_sim_camera().validate());
}

}  // namespace
}  // namespace pivo
