#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace pivo {
namespace {

using testing::random_vec3;
using testing::relative_error;

struct Track {
  std::vector<PoseObservation> obs;
  Vec3 landmark;
};

PoseObservation observe(const Vec3& p, const Vec4& q, const Vec3& landmark, const CameraModel& cam,
                        const Vec2& noise = Vec2::Zero()) {
  PoseObservation o;
  o.p = p;
  o.q = q;
  o.pixel = project(world_to_camera(camera_extrinsics(p, q, cam), landmark), cam) + noise;
  o.normalized = undistort(o.pixel, cam);
  return o;
}

// m poses spread over `baseline` metres sideways, looking roughly at a
// landmark 4-9 m ahead along body x.
Track random_track(std::mt19937_64& rng, int m, double baseline, const CameraModel& cam, double pixel_sigma = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, pixel_sigma);
  Track t;
  t.landmark = Vec3(6.5 + 2.5 * u(rng), 1.5 * u(rng), 1.0 * u(rng));
  const Vec3 dir = Vec3(0.2 * u(rng), 1.0, 0.3 * u(rng)).normalized();
  const Vec3 start = Vec3(0.0, t.landmark.y(), 0.0) + random_vec3(rng, 0.2) - 0.5 * baseline * dir;
  for (int i = 0; i < m; ++i) {
    const Vec3 p = start + dir * (baseline * i / std::max(1, m - 1));
    const Vec4 q = quat::from_euler(0.1 * u(rng), 0.05 * u(rng), 0.05 * u(rng));
    const Vec2 noise = pixel_sigma > 0 ? Vec2(n(rng), n(rng)) : Vec2::Zero();
    t.obs.push_back(observe(p, q, t.landmark, cam, noise));
  }
  return t;
}

Vec pose_vector(const std::vector<PoseObservation>& obs) {
  Vec x(7 * obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    x.segment<3>(7 * i) = obs[i].p;
    x.segment<4>(7 * i + 3) = obs[i].q;
  }
  return x;
}

std::vector<PoseObservation> with_poses(std::vector<PoseObservation> obs, const Vec& x) {
  for (std::size_t i = 0; i < obs.size(); ++i) {
    obs[i].p = x.segment<3>(7 * i);
    obs[i].q = x.segment<4>(7 * i + 3);
  }
  return obs;
}

CameraModel forward_camera() {
  CameraModel c;
  c.fx = c.fy = 400.0;
  c.cx = 320.0;
  c.cy = 240.0;
  c.width = 640;
  c.height = 480;
  return c;
}

TEST(TwoViewInit, BisectorFeatureDepth) {
  const CameraModel c = forward_camera();
  const Vec3 landmark(0.5, 0.0, 5.0);
  std::vector<PoseObservation> obs{observe(Vec3::Zero(), quat::identity(), landmark, c),
                                   observe(Vec3(1, 0, 0), quat::identity(), landmark, c)};
  const FeatureSolver s(obs, c);
  EXPECT_NEAR(1.0 / s.two_view_init().theta[2], 5.0, 1e-9);
}

TEST(TwoViewInit, ZeroBaselineIsLowParallax) {
  const CameraModel c = forward_camera();
  const Vec3 landmark(0.5, 0.0, 5.0);
  std::vector<PoseObservation> obs{observe(Vec3::Zero(), quat::identity(), landmark, c),
                                   observe(Vec3::Zero(), quat::identity(), landmark, c)};
  try {
    FeatureSolver(obs, c).two_view_init();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LowParallax);
  }
}

TEST(TwoViewInit, FeatureBehindAnchor) {
  const CameraModel c = forward_camera();
  // rays through the pixels of a point behind both cameras
  std::vector<PoseObservation> obs(2);
  obs[0].p = Vec3::Zero();
  obs[1].p = Vec3(1, 0, 0);
  obs[0].q = obs[1].q = quat::identity();
  obs[0].normalized = Vec2(-0.1, 0.0);
  obs[1].normalized = Vec2(0.1, 0.0);
  obs[0].pixel = c.normalized_to_pixel(obs[0].normalized);
  obs[1].pixel = c.normalized_to_pixel(obs[1].normalized);
  try {
    FeatureSolver(obs, c).two_view_init();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BehindCamera);
  }
}

TEST(TwoViewInit, NeedsTwoObservations) {
  const CameraModel c = forward_camera();
  std::vector<PoseObservation> obs{observe(Vec3::Zero(), quat::identity(), Vec3(0, 0, 5), c)};
  EXPECT_THROW(FeatureSolver(obs, c), Error);
}

TEST(GaussNewton, NoiselessFivePoseTrack) {
  std::mt19937_64 rng(1);
  const CameraModel cam = default_sim_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Track t = random_track(rng, 5, 1.0, cam);
    const TriangulationResult r = FeatureSolver(t.obs, cam).solve();
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.residual_rms, 1e-9);
    EXPECT_LT((r.p_star - t.landmark).norm(), 1e-8);
  }
}

TEST(GaussNewton, StartingAtTruthIsFixedPoint) {
  std::mt19937_64 rng(2);
  const CameraModel cam = default_sim_camera();
  const Track t = random_track(rng, 4, 1.0, cam);
  const FeatureSolver s(t.obs, cam);
  const Vec3 pc = world_to_camera(s.anchor(), t.landmark);
  InverseDepthPoint truth;
  truth.theta = Vec3(pc.x() / pc.z(), pc.y() / pc.z(), 1.0 / pc.z());
  const TriangulationResult r = s.refine(truth, Mat());
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_LT((r.theta - truth.theta).norm(), 1e-10);
}

TEST(GaussNewton, PStarConsistentWithAnchorExtrinsics) {
  std::mt19937_64 rng(3);
  const CameraModel cam = default_sim_camera();
  const Track t = random_track(rng, 5, 0.8, cam, 1.0);
  const FeatureSolver s(t.obs, cam);
  const TriangulationResult r = s.solve();
  const Vec3 pc = world_to_camera(s.anchor(), r.p_star);
  EXPECT_LT((Vec3(pc.x() / pc.z(), pc.y() / pc.z(), 1.0 / pc.z()) - r.theta).norm(), 1e-10);
}

// Dense Levenberg-Marquardt over the world point on the same objective
// (normalized-coordinate residuals), numeric derivatives.
Vec3 nls_oracle(const std::vector<PoseObservation>& obs, const CameraModel& cam, Vec3 x) {
  auto residual = [&](const Vec3& p) {
    Vec r(2 * obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const Vec3 pc = world_to_camera(camera_extrinsics(obs[i].p, obs[i].q, cam), p);
      r.segment<2>(2 * i) = obs[i].normalized - Vec2(pc.x() / pc.z(), pc.y() / pc.z());
    }
    return r;
  };
  double lambda = 1e-3;
  for (int it = 0; it < 200; ++it) {
    const Vec r = residual(x);
    const Mat J = testing::numeric_jacobian([&](const Vec& p) -> Vec { return residual(Vec3(p)); }, x);
    const Mat A = J.transpose() * J;
    const Vec3 step = -(A + lambda * Mat(A.diagonal().asDiagonal())).ldlt().solve(J.transpose() * r);
    if (residual(x + step).squaredNorm() < r.squaredNorm()) {
      x += step;
      lambda *= 0.3;
      if (step.norm() < 1e-13) break;
    } else {
      lambda *= 10.0;
    }
  }
  return x;
}

TEST(GaussNewton, NoisyTrackMatchesDenseLeastSquares) {
  std::mt19937_64 rng(4);
  const CameraModel cam = default_sim_camera();
  for (int trial = 0; trial < 10; ++trial) {
    // at least 30 degrees of parallax out to 9 m
    Track t = random_track(rng, 10, 6.0, cam, 1.0);
    const double par = std::acos((t.landmark - t.obs.front().p).normalized().dot((t.landmark - t.obs.back().p).normalized()));
    EXPECT_GT(par, 30.0 * std::numbers::pi / 180.0);
    const TriangulationResult r = FeatureSolver(t.obs, cam).solve();
    const Vec3 oracle = nls_oracle(t.obs, cam, t.landmark);
    EXPECT_LE((r.p_star - t.landmark).norm(), (oracle - t.landmark).norm() + 1e-6);
  }
}

TEST(GaussNewton, GradientVanishesAtConvergence) {
  std::mt19937_64 rng(5);
  const CameraModel cam = default_sim_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Track t = random_track(rng, 6, 1.0, cam, 1.0);
    const FeatureSolver s(t.obs, cam);
    EXPECT_LE(s.gradient(s.solve().theta).norm(), 1e-8);
  }
}

TEST(GaussNewton, DepthScalesWithScene) {
  const CameraModel cam = forward_camera();
  const Vec3 landmark(0.3, -0.2, 6.0);
  for (double s : {0.5, 2.0, 10.0}) {
    std::vector<PoseObservation> a, b;
    for (int i = 0; i < 4; ++i) {
      const Vec3 p(0.3 * i, 0.05 * i, 0.0);
      const Vec4 q = quat::from_euler(0.02 * i, -0.01 * i, 0.0);
      a.push_back(observe(p, q, landmark, cam));
      b.push_back(observe(s * p, q, s * landmark, cam));
    }
    const double da = 1.0 / FeatureSolver(a, cam).solve().theta[2];
    const double db = 1.0 / FeatureSolver(b, cam).solve().theta[2];
    EXPECT_NEAR(db, s * da, 1e-9 * s * da);
  }
}

TEST(GaussNewton, DegenerateAndFarFeatures) {
  const CameraModel cam = forward_camera();
  TriangulationOptions opts;
  opts.min_parallax_deg = 0.0;
  // 500 m away: above the depth gate
  const Vec3 far(0.0, 0.0, 500.0);
  std::vector<PoseObservation> obs{observe(Vec3::Zero(), quat::identity(), far, cam),
                                   observe(Vec3(5, 0, 0), quat::identity(), far, cam)};
  try {
    FeatureSolver(obs, cam, opts).solve();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateGeometry);
  }
}

// Sensitivity of the converged point to the observing poses, against central
// differences of the whole init + refine pipeline.
TEST(Sensitivity, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const CameraModel cam = default_sim_camera();
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + trial % 6;
    const Track t = random_track(rng, m, 0.6 + 0.2 * (trial % 4), cam, 0.7);
    const TriangulationResult r = FeatureSolver(t.obs, cam).solve();
    ASSERT_TRUE(r.converged);
    const Mat num = testing::numeric_jacobian(
        [&](const Vec& x) -> Vec { return FeatureSolver(with_poses(t.obs, x), cam).solve().theta; },
        pose_vector(t.obs));
    worst = std::max(worst, relative_error(r.dtheta_dposes, num));
    ++cases;
  }
  EXPECT_EQ(cases, 100);
  EXPECT_LE(worst, 1e-4);
}

TEST(Sensitivity, AgreesWithImplicitFunctionTheorem) {
  std::mt19937_64 rng(8);
  const CameraModel cam = default_sim_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Track t = random_track(rng, 5, 1.0, cam, 1.0);
    const FeatureSolver s(t.obs, cam);
    const TriangulationResult r = s.solve();
    Mat3 N;
    Mat dg;
    s.gradient_partials(r.theta, &N, &dg);
    // exact Hessian of the stationarity condition; N alone drops the
    // residual curvature term
    const Mat3 dg_dtheta = testing::numeric_jacobian([&](const Vec& th) -> Vec { return s.gradient(Vec3(th)); }, r.theta);
    const Mat implicit = -dg_dtheta.lu().solve(dg);
    EXPECT_LE(relative_error(r.dtheta_dposes, implicit), 1e-3);
  }
}

TEST(Sensitivity, RigidTranslationLeavesThetaUnchanged) {
  std::mt19937_64 rng(9);
  const CameraModel cam = default_sim_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Track t = random_track(rng, 4, 1.0, cam, 0.5);
    const TriangulationResult r = FeatureSolver(t.obs, cam).solve();
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 d = Vec3::Zero();
      for (int i = 0; i < 4; ++i) d += r.dtheta_dposes.col(7 * i + axis);
      EXPECT_LT(d.norm(), 1e-8);
    }
  }
}

TEST(Sensitivity, ScatterLeavesNonObservingColumnsZero) {
  std::mt19937_64 rng(10);
  const CameraModel cam = default_sim_camera();
  const Track t = random_track(rng, 3, 1.0, cam, 0.5);
  const TriangulationResult r = FeatureSolver(t.obs, cam).solve();
  const std::vector<int> offsets{layout::pose_offset(0), layout::pose_offset(2), layout::pose_offset(4)};
  const Mat d = differentiate_triangulation(r, offsets, layout::dimension(5));
  Mat masked = d;
  for (int off : offsets) masked.middleCols(off, 7).setZero();
  EXPECT_EQ(masked.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.middleCols(layout::pose_offset(2), 7), r.dtheta_dposes.middleCols(7, 7));
  EXPECT_THROW(differentiate_triangulation(r, {0, 19}, layout::dimension(5)), Error);
}

TEST(Sensitivity, InitializerContributionVanishesAtConvergence) {
  std::mt19937_64 rng(11);
  const CameraModel cam = default_sim_camera();
  TriangulationOptions ablate;
  ablate.include_init_derivative = false;
  const Track t = random_track(rng, 5, 1.0, cam, 1.0);
  const TriangulationResult full = FeatureSolver(t.obs, cam).solve();
  const TriangulationResult cut = FeatureSolver(t.obs, cam, ablate).solve();
  EXPECT_EQ(full.theta, cut.theta);
  EXPECT_LE(relative_error(cut.dtheta_dposes, full.dtheta_dposes), 1e-4);
}

TEST(Prediction, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const CameraModel cam = default_sim_camera();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Track t = random_track(rng, 2 + trial % 5, 1.0, cam, 0.7);
    const FeatureSolver s(t.obs, cam);
    const FeaturePrediction pred = s.predict(s.solve());
    const Mat num = testing::numeric_jacobian(
        [&](const Vec& x) -> Vec {
          const FeatureSolver sx(with_poses(t.obs, x), cam);
          return sx.predict_pixels(sx.solve().theta);
        },
        pose_vector(t.obs));
    worst = std::max(worst, relative_error(pred.jacobian, num));
  }
  EXPECT_LE(worst, 1e-4);
}

}  // namespace
}  // namespace pivo
