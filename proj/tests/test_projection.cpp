#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vinedmp/projection.hpp"
#include "vinedmp/rng.hpp"

using namespace vinedmp;

namespace {

CameraRig fronto(double depth = 0.8) {
  CameraRig rig;
  rig.intrinsics = {320.0, 240.0, 500.0, 500.0};
  rig.plane.normal = Eigen::Vector3d::UnitZ();
  rig.plane.point = Eigen::Vector3d(0, 0, depth);
  return rig;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

// A rig whose plane faces the camera somewhere in its field of view.
CameraRig random_rig(Rng& rng) {
  CameraRig rig;
  rig.intrinsics = {rng.uniform(200, 440), rng.uniform(150, 330), rng.uniform(300, 900), rng.uniform(300, 900)};
  rig.pose.rotation = random_rotation(rng);
  rig.pose.position = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  const Eigen::Vector3d ahead_cam(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.5, 2.0));
  rig.plane.point = rig.pose.position + rig.pose.rotation * ahead_cam;
  // Normal within ~50 degrees of the optical axis.
  const Eigen::Vector3d n_cam = Eigen::Vector3d(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), -1.0).normalized();
  rig.plane.normal = rig.pose.rotation * n_cam;
  return rig;
}

// Parametric ray in the world frame: C + s d, solved directly against n.(X - p) = 0.
Eigen::Vector3d oracle(const Eigen::Vector2d& px, const CameraRig& rig) {
  const auto& in = rig.intrinsics;
  const Eigen::Vector3d d = rig.pose.rotation * Eigen::Vector3d((px.x() - in.cx) / in.fx, (px.y() - in.cy) / in.fy, 1.0);
  const Eigen::Vector3d c = rig.pose.position;
  const double s = rig.plane.normal.dot(rig.plane.point - c) / rig.plane.normal.dot(d);
  return c + s * d;
}

}  // namespace

TEST(PixelToPlane, OpticalAxisHitsPlaneAtDepth) {
  const auto p = pixel_to_plane({320, 240}, fronto());
  EXPECT_LE((p - Eigen::Vector3d(0, 0, 0.8)).norm(), 1e-12);
}

TEST(PixelToPlane, OffAxisPixel) {
  const auto p = pixel_to_plane({420, 240}, fronto());
  EXPECT_LE((p - Eigen::Vector3d(0.16, 0, 0.8)).norm(), 1e-12);
}

TEST(PixelToPlane, MatchesParametricOracleOnRandomRigs) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto rig = random_rig(rng);
    const Eigen::Vector2d px(rng.uniform(0, 640), rng.uniform(0, 480));
    const auto p = pixel_to_plane(px, rig);
    EXPECT_LE((p - oracle(px, rig)).norm(), 1e-9);
    EXPECT_LE(std::abs(rig.plane.normal.dot(p - rig.plane.point)), 1e-9);
  }
}

TEST(PixelToPlane, RoundTripThroughImage) {
  Rng rng(102);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto rig = random_rig(rng);
    const Eigen::Vector2d px(rng.uniform(0, 640), rng.uniform(0, 480));
    const auto back = plane_to_pixel(pixel_to_plane(px, rig), rig.intrinsics, rig.pose);
    EXPECT_LT((back - px).norm(), 1e-6);
  }
}

TEST(PixelToPlane, InvariantToPlaneAnchor) {
  Rng rng(103);
  for (int trial = 0; trial < 200; ++trial) {
    auto rig = random_rig(rng);
    const Eigen::Vector2d px(rng.uniform(0, 640), rng.uniform(0, 480));
    const auto p1 = pixel_to_plane(px, rig);
    // Slide the anchor point within the plane.
    const Eigen::Vector3d t1 = rig.plane.normal.unitOrthogonal();
    const Eigen::Vector3d t2 = rig.plane.normal.cross(t1);
    rig.plane.point += rng.uniform(-1, 1) * t1 + rng.uniform(-1, 1) * t2;
    EXPECT_LE((pixel_to_plane(px, rig) - p1).norm(), 1e-9);
  }
}

TEST(PixelToPlane, FrontoParallelScalingLaw) {
  Rng rng(104);
  for (int trial = 0; trial < 200; ++trial) {
    const double depth = rng.uniform(0.3, 3.0);
    auto rig = fronto(depth);
    rig.intrinsics.fx = rig.intrinsics.fy = rng.uniform(300, 900);
    const Eigen::Vector2d a(rng.uniform(0, 640), rng.uniform(0, 480)), b(rng.uniform(0, 640), rng.uniform(0, 480));
    const double plane_dist = (pixel_to_plane(a, rig) - pixel_to_plane(b, rig)).norm();
    EXPECT_NEAR(plane_dist, (a - b).norm() * depth / rig.intrinsics.fx, 1e-9);
  }
}

TEST(PixelToPlane, ParallelRayAndBehindCamera) {
  auto rig = fronto();
  rig.plane.normal = Eigen::Vector3d::UnitX();
  rig.plane.point = Eigen::Vector3d(1, 0, 0);
  EXPECT_THROW(pixel_to_plane({320, 240}, rig), RayParallelToPlane);
  EXPECT_THROW(pixel_to_plane({320, 240}, fronto(-0.8)), PointBehindCamera);
}

TEST(PlaneToPixel, InverseOfOpticalAxis) {
  const auto rig = fronto();
  const auto px = plane_to_pixel({0, 0, 0.8}, rig.intrinsics, rig.pose);
  EXPECT_LE((px - Eigen::Vector2d(320, 240)).norm(), 1e-12);
  EXPECT_THROW(plane_to_pixel({0.3, 0.1, 0.0}, rig.intrinsics, rig.pose), PointBehindCamera);
}

TEST(PlaneToPixel, OnPlaneRoundTrip) {
  Rng rng(105);
  const auto rig = random_rig(rng);
  const Eigen::Vector3d t1 = rig.plane.normal.unitOrthogonal();
  const Eigen::Vector3d t2 = rig.plane.normal.cross(t1);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d p = rig.plane.point + rng.uniform(-0.2, 0.2) * t1 + rng.uniform(-0.2, 0.2) * t2;
    const auto back = pixel_to_plane(plane_to_pixel(p, rig.intrinsics, rig.pose), rig);
    EXPECT_LT((back - p).norm(), 1e-6);
  }
}

TEST(TrajectoryToPlane, TwoPointComposition) {
  Eigen::MatrixXd px(2, 2);
  px << 320, 240, 420, 240;
  const auto out = trajectory_to_plane(Trajectory(px, Frame::image_px, std::vector<double>{0.0, 1.0}), fronto());
  EXPECT_EQ(out.frame(), Frame::task_plane_m);
  EXPECT_LE((out.point(0) - Eigen::Vector3d(0, 0, 0.8)).norm(), 1e-12);
  EXPECT_LE((out.point(1) - Eigen::Vector3d(0.16, 0, 0.8)).norm(), 1e-12);
  EXPECT_EQ(*out.timestamps(), (std::vector<double>{0.0, 1.0}));
}

TEST(TrajectoryToPlane, MatchesStoredGolden) {
  const auto rig = rig_from_json(testutil::load_json("rig_tilted.json"));
  const auto demo = trajectory_from_json(testutil::load_json("demo_drawn.json"));
  const auto golden = trajectory_from_json(testutil::load_json("demo_drawn_plane.json"));
  const auto out = trajectory_to_plane(demo, rig);
  ASSERT_EQ(out.size(), golden.size());
  EXPECT_LE((out.points() - golden.points()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TrajectoryToPlane, ReportsFailingIndex) {
  auto rig = fronto();
  // Steep tilt: rays above row ~73 meet the plane behind the camera.
  rig.plane.normal = Eigen::Vector3d(0, 3, 1).normalized();
  rig.plane.point = Eigen::Vector3d(0, 0, 0.8);
  Eigen::MatrixXd px(3, 2);
  px << 320, 240, 320, 300, 320, 10;
  try {
    trajectory_to_plane(Trajectory(px, Frame::image_px), rig);
    FAIL() << "expected PointBehindCamera";
  } catch (const PointBehindCamera& e) {
    const auto* indexed = dynamic_cast<const AtIndex<PointBehindCamera>*>(&e);
    ASSERT_NE(indexed, nullptr);
    EXPECT_EQ(indexed->index(), 2u);
  }
}

TEST(GripperYaw, Conventions) {
  constexpr double pi = std::numbers::pi;
  EXPECT_NEAR(gripper_yaw({0, 0}, {1, 0}), pi / 2, 1e-15);
  EXPECT_NEAR(gripper_yaw({0, 0}, {0, 1}), pi, 1e-15);
  EXPECT_THROW(gripper_yaw({1, 1}, {1, 1}), DegenerateDirection);
  Rng rng(106);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d a(rng.uniform(-5, 5), rng.uniform(-5, 5)), b(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const double y = gripper_yaw(a, b);
    EXPECT_GT(y, -pi);
    EXPECT_LE(y, pi);
    const double diff = std::remainder(gripper_yaw(b, a) - y, 2 * pi);
    EXPECT_NEAR(std::abs(diff), pi, 1e-12);
  }
}

TEST(RigRecord, RoundTripAndValidation) {
  Rng rng(107);
  const auto rig = random_rig(rng);
  const auto back = rig_from_json(to_json(rig));
  EXPECT_EQ(back.pose.rotation, rig.pose.rotation);
  EXPECT_EQ(back.plane.point, rig.plane.point);
  auto j = to_json(rig);
  j["pose"]["R"] = {1, 0, 0, 0, 1, 0, 0, 0, 2};
  EXPECT_THROW(rig_from_json(j), FormatError);
  j = to_json(rig);
  j["intrinsics"].erase("fx");
  EXPECT_THROW(rig_from_json(j), FormatError);
}
