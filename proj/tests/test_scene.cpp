#include <cmath>

#include <gtest/gtest.h>

#include "vinedmp/scene.hpp"

using namespace vinedmp;

namespace {

// Vertical stem from y=300 up to y=200 at x=320 over a grape below it.
Scene straight_stem() {
  Scene s;
  s.grape_center = {320, 330};
  s.grape_radius = 30;
  s.stem_bottom = {320, 300};
  s.stem_top = {320, 200};
  s.rng_seed = 5;
  return s;
}

Leaf hanging_leaf(double length, double width) {
  Leaf l;
  l.hinge = {320, 150};
  l.length = length;
  l.width = width;
  l.rest_angle = kPi / 2;  // pointing down the image
  l.min_angle = l.rest_angle - 1.0;
  l.max_angle = l.rest_angle + 1.0;
  l.angle = l.rest_angle;
  return l;
}

// Independent point-in-ellipse test for a leaf hinged at one end of its major axis.
bool inside_leaf(const Leaf& l, const Eigen::Vector2d& p) {
  const double a = 0.5 * l.length, b = 0.5 * l.width;
  const Eigen::Vector2d c = l.hinge + a * Eigen::Vector2d(std::cos(l.angle), std::sin(l.angle));
  const Eigen::Vector2d d = p - c;
  const double u = d.x() * std::cos(l.angle) + d.y() * std::sin(l.angle);
  const double v = -d.x() * std::sin(l.angle) + d.y() * std::cos(l.angle);
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

bool same_pixel(const RgbImage& img, const Eigen::Vector2d& p, Rgb c) {
  const auto px = img.pixel(static_cast<int>(std::lround(p.y())), static_cast<int>(std::lround(p.x())));
  return px == c;
}

}  // namespace

TEST(Generate, Deterministic) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull, 123456789ull}) {
    EXPECT_EQ(to_json(generate_scene(seed)).dump(), to_json(generate_scene(seed)).dump());
    EXPECT_TRUE(generate_scene(seed) == generate_scene(seed));
  }
  EXPECT_FALSE(generate_scene(1) == generate_scene(2));
}

TEST(Generate, InvariantsHold) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = generate_scene(seed);
    EXPECT_GT(occlusion_fraction(s), 0.0) << seed;
    EXPECT_NEAR((s.stem_bottom - s.grape_center).norm(), s.grape_radius, 1.0);
    ASSERT_FALSE(s.leaves.empty());
    for (const auto& l : s.leaves) EXPECT_NO_THROW(l.validate());
    EXPECT_TRUE(principal_leaf(s).has_value());
  }
}

TEST(Generate, LeafCountsAreUniform) {
  // Chi-square goodness of fit, 3 categories (df = 2), 1% critical value 9.210.
  SceneConfig cfg;
  std::array<int, 3> counts{};
  const int n = 1000;
  for (int seed = 0; seed < n; ++seed) ++counts[generate_scene(static_cast<std::uint64_t>(seed), cfg).leaves.size() - 1];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 3.0) * (c - n / 3.0) / (n / 3.0);
  EXPECT_LT(chi2, 9.210) << counts[0] << " " << counts[1] << " " << counts[2];
}

TEST(Generate, RejectsBadConfig) {
  SceneConfig cfg;
  cfg.min_leaves = 3;
  cfg.max_leaves = 2;
  EXPECT_THROW(generate_scene(1, cfg), InvalidArgument);
}

TEST(Occlusion, NoLeavesIsZero) { EXPECT_EQ(occlusion_fraction(straight_stem()), 0.0); }

TEST(Occlusion, FullCoverIsOne) {
  auto s = straight_stem();
  s.leaves.push_back(hanging_leaf(200, 40));  // spans y in [150, 350]
  EXPECT_EQ(occlusion_fraction(s), 1.0);
}

TEST(Occlusion, HalfCover) {
  auto s = straight_stem();
  s.leaves.push_back(hanging_leaf(100, 30));  // tip exactly at the stem midpoint y = 250
  EXPECT_NEAR(occlusion_fraction(s), 0.5, 0.02);
}

TEST(Render, Deterministic) {
  const auto s = generate_scene(42);
  EXPECT_EQ(render(s).data, render(s).data);
  SceneConfig busy;
  busy.busy_probability = 1.0;
  const auto b = generate_scene(42, busy);
  EXPECT_EQ(b.background, Background::busy);
  EXPECT_EQ(render(b, 120, 160).data, render(b, 120, 160).data);
  EXPECT_THROW(render(s, 32, 32), InvalidArgument);
}

TEST(Render, StemVisibleWithoutLeaves) {
  const auto s = straight_stem();
  const auto img = render(s);
  const auto pal = scene_palette(s);
  for (const auto& p : stem_samples(s)) {
    if ((p - s.grape_center).norm() <= s.grape_radius + 1.0) continue;  // grape overlaps the stem base
    EXPECT_TRUE(same_pixel(img, p, pal.stem)) << p.transpose();
  }
}

TEST(Render, OccludingLeafCoversStem) {
  auto s = straight_stem();
  s.leaves.push_back(hanging_leaf(170, 34));
  const auto img = render(s);
  const auto pal = scene_palette(s);
  int covered = 0, agree = 0;
  const auto samples = stem_samples(s);
  for (const auto& p : samples) {
    const bool oracle = inside_leaf(s.leaves[0], p);
    const bool painted = same_pixel(img, p, pal.leaf);
    covered += painted;
    agree += oracle == painted;
  }
  EXPECT_GE(covered, 90);
  EXPECT_GE(agree, 98);
}

TEST(Execute, FarTrajectoryLeavesLeavesAtRest) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = generate_scene(seed);
    Eigen::MatrixXd p(2, 2);
    p << 1, 1, 2, 2;  // image corner, far from everything
    const auto r = execute(s, Trajectory(p, Frame::image_px));
    for (std::size_t k = 0; k < s.leaves.size(); ++k)
      for (double a : r.leaf_angles[k]) EXPECT_EQ(a, s.leaves[k].rest_angle);
    EXPECT_FALSE(r.success);
  }
}

TEST(Execute, OutOfBoundsReportsIndex) {
  auto s = generate_scene(3);
  Eigen::MatrixXd p(3, 2);
  p << 10, 10, 20, 20, 700, 20;
  try {
    execute(s, Trajectory(p, Frame::image_px));
    FAIL();
  } catch (const OutOfBounds& e) {
    EXPECT_EQ(e.index(), 2u);
  }
}

TEST(Execute, OracleSucceedsAndReverseDoesWorse) {
  int forward = 0, backward = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scene = generate_scene(seed);
    const auto demo = oracle_demo(scene, seed);
    auto a = scene;
    const auto r = execute(a, demo);
    forward += r.success;
    if (r.success) {
      EXPECT_LE(r.final_occlusion, occlusion_fraction(scene));
    }
    // Leaves stay within limits and report one angle per trajectory point.
    for (std::size_t k = 0; k < a.leaves.size(); ++k) {
      ASSERT_EQ(r.leaf_angles[k].size(), demo.size());
      for (double ang : r.leaf_angles[k]) {
        EXPECT_GE(ang, a.leaves[k].min_angle - 1e-12);
        EXPECT_LE(ang, a.leaves[k].max_angle + 1e-12);
      }
    }
    auto b = scene;
    backward += execute(b, Trajectory(demo.points().colwise().reverse(), Frame::image_px)).success;
  }
  EXPECT_EQ(forward, 50);
  EXPECT_LT(backward, forward);
}

TEST(Execute, NoDeflectionOutOfReach) {
  const auto s = generate_scene(8);
  for (const auto& l : s.leaves) {
    Leaf moved = l;
    moved.angle = l.rest_angle;
    const Eigen::Vector2d far = l.hinge + (l.length + kDefaultGripperRadius + 0.5) * Eigen::Vector2d(1, 0);
    EXPECT_EQ(resolve_leaf_angle(moved, far, kDefaultGripperRadius), l.rest_angle);
  }
}

TEST(Oracle, ShapeAndDeterminism) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_scene(seed);
    const auto d = oracle_demo(s, 77);
    ASSERT_EQ(d.size(), 50u);
    EXPECT_GE(d.points().minCoeff(), 0.0);
    EXPECT_LE(d.points().col(0).maxCoeff(), s.width - 1);
    EXPECT_LE(d.points().col(1).maxCoeff(), s.height - 1);
    EXPECT_EQ(d.points(), oracle_demo(s, 77).points());
  }
  EXPECT_THROW(oracle_demo(straight_stem(), 1), NoOccludingLeaf);
}

TEST(SceneRecord, RoundTrip) {
  const auto s = generate_scene(17);
  const auto j = to_json(s);
  const auto back = scene_from_json(j);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  auto bad = j;
  bad["leaves"][0]["length"] = -1.0;
  EXPECT_THROW(scene_from_json(bad), FormatError);
  EXPECT_THROW(scene_from_json(nlohmann::json::object()), FormatError);
}
