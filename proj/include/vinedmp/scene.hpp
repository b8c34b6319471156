#pragma once

// Planar vine scene: one grape with its stem and spring-hinged leaves that a
// disc-shaped gripper can push aside. Contact is resolved quasi-statically in
// the stiff-spring limit: every leaf sits as close to its rest angle as the
// gripper allows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vinedmp/color.hpp"
#include "vinedmp/errors.hpp"
#include "vinedmp/image.hpp"
#include "vinedmp/rng.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

inline constexpr double kPi = std::numbers::pi;

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

namespace geometry {

/// Distance from (y0, y1) to the ellipse x0^2/e0^2 + x1^2/e1^2 = 1, first
/// quadrant, e0 >= e1 > 0 (Eberly's bisection formulation).
inline double distance_first_quadrant(double e0, double e1, double y0, double y1) {
  auto get_root = [](double r0, double z0, double z1, double g) {
    const double n0 = r0 * z0;
    double s0 = z1 - 1.0;
    double s1 = g < 0.0 ? 0.0 : std::hypot(n0, z1) - 1.0;
    double s = 0.0;
    for (int i = 0; i < 200; ++i) {
      s = 0.5 * (s0 + s1);
      if (s == s0 || s == s1) break;
      const double ratio0 = n0 / (s + r0);
      const double ratio1 = z1 / (s + 1.0);
      const double gg = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
      if (gg > 0.0)
        s0 = s;
      else if (gg < 0.0)
        s1 = s;
      else
        break;
    }
    return s;
  };

  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double z0 = y0 / e0;
      const double z1 = y1 / e1;
      const double g = z0 * z0 + z1 * z1 - 1.0;
      if (g == 0.0) return 0.0;
      const double r0 = (e0 / e1) * (e0 / e1);
      const double sbar = get_root(r0, z0, z1, g);
      const double x0 = r0 * y0 / (sbar + r0);
      const double x1 = y1 / (sbar + 1.0);
      return std::hypot(x0 - y0, x1 - y1);
    }
    return std::abs(y1 - e1);
  }
  const double numer0 = e0 * y0;
  const double denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    const double x0 = e0 * xde0;
    const double x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0));
    return std::hypot(x0 - y0, x1);
  }
  return std::abs(y0 - e0);
}

/// Rotated ellipse given by center, semi-axes and orientation of the first axis.
struct Ellipse {
  Eigen::Vector2d center;
  double a;
  double b;
  double angle;

  Eigen::Vector2d to_local(const Eigen::Vector2d& p) const {
    const Eigen::Vector2d d = p - center;
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
  }

  bool contains(const Eigen::Vector2d& p) const {
    const auto q = to_local(p);
    return (q.x() / a) * (q.x() / a) + (q.y() / b) * (q.y() / b) <= 1.0;
  }

  /// Distance to the boundary curve (also for interior points).
  double boundary_distance(const Eigen::Vector2d& p) const {
    const auto q = to_local(p);
    double y0 = std::abs(q.x()), y1 = std::abs(q.y());
    double e0 = a, e1 = b;
    if (e0 < e1) {
      std::swap(e0, e1);
      std::swap(y0, y1);
    }
    return distance_first_quadrant(e0, e1, y0, y1);
  }

  bool overlaps_disc(const Eigen::Vector2d& c, double r) const {
    return contains(c) || boundary_distance(c) < r;
  }
};

inline double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace geometry

/// A leaf hinged at one end of its major axis; angles are image-frame
/// (atan2 of dy, dx with y pointing down).
struct Leaf {
  Eigen::Vector2d hinge = Eigen::Vector2d::Zero();
  double length = 1.0;
  double width = 0.5;
  double rest_angle = 0.0;
  double stiffness = 1.0;
  double min_angle = -1.0;
  double max_angle = 1.0;
  double angle = 0.0;

  geometry::Ellipse ellipse_at(double a) const {
    const Eigen::Vector2d u(std::cos(a), std::sin(a));
    return {hinge + 0.5 * length * u, 0.5 * length, 0.5 * width, a};
  }
  geometry::Ellipse ellipse() const { return ellipse_at(angle); }

  void validate() const {
    if (!(length > 0.0) || !(width > 0.0) || !(stiffness > 0.0))
      throw InvalidArgument("leaf length, width and stiffness must be positive");
    if (!(min_angle < rest_angle && rest_angle < max_angle))
      throw InvalidArgument("leaf rest angle must lie strictly inside its limits");
    if (angle < min_angle - 1e-12 || angle > max_angle + 1e-12)
      throw InvalidArgument("leaf angle outside its limits");
  }
};

enum class Background { plain, busy };

struct Scene {
  int height = 480;
  int width = 640;
  Eigen::Vector2d grape_center = Eigen::Vector2d::Zero();
  double grape_radius = 30.0;
  Eigen::Vector2d stem_top = Eigen::Vector2d::Zero();
  /// Touches the grape boundary.
  Eigen::Vector2d stem_bottom = Eigen::Vector2d::Zero();
  std::vector<Leaf> leaves;
  Background background = Background::plain;
  std::uint64_t background_seed = 0;
  std::uint64_t rng_seed = 0;

  void reset_leaves() {
    for (auto& l : leaves) l.angle = l.rest_angle;
  }

  bool operator==(const Scene& o) const {
    auto same_leaf = [](const Leaf& a, const Leaf& b) {
      return a.hinge == b.hinge && a.length == b.length && a.width == b.width && a.rest_angle == b.rest_angle &&
             a.stiffness == b.stiffness && a.min_angle == b.min_angle && a.max_angle == b.max_angle &&
             a.angle == b.angle;
    };
    if (leaves.size() != o.leaves.size()) return false;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      if (!same_leaf(leaves[i], o.leaves[i])) return false;
    return height == o.height && width == o.width && grape_center == o.grape_center &&
           grape_radius == o.grape_radius && stem_top == o.stem_top && stem_bottom == o.stem_bottom &&
           background == o.background && background_seed == o.background_seed && rng_seed == o.rng_seed;
  }
};

inline constexpr int kStemSamples = 100;
inline constexpr double kDefaultOcclusionThreshold = 0.1;
inline constexpr double kDefaultGripperRadius = 12.0;

inline std::vector<Eigen::Vector2d> stem_samples(const Scene& scene) {
  std::vector<Eigen::Vector2d> pts(kStemSamples);
  for (int i = 0; i < kStemSamples; ++i) {
    const double t = static_cast<double>(i) / (kStemSamples - 1);
    pts[static_cast<std::size_t>(i)] = (1.0 - t) * scene.stem_bottom + t * scene.stem_top;
  }
  return pts;
}

/// Fraction of stem sample points inside any leaf at its current angle.
inline double occlusion_fraction(const Scene& scene) {
  int covered = 0;
  for (const auto& p : stem_samples(scene)) {
    for (const auto& leaf : scene.leaves) {
      if (leaf.ellipse().contains(p)) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / kStemSamples;
}

/// Occlusion caused by a single leaf held at angle `a`.
inline double leaf_occlusion(const Scene& scene, const Leaf& leaf, double a) {
  const auto e = leaf.ellipse_at(a);
  int covered = 0;
  for (const auto& p : stem_samples(scene))
    if (e.contains(p)) ++covered;
  return static_cast<double>(covered) / kStemSamples;
}

/// Quasi-static contact: the leaf stays on the side of the gripper it is
/// currently on and settles at the angle closest to rest that does not
/// intersect the gripper disc. Angles are found by bisection to `tol` radians.
inline double resolve_leaf_angle(const Leaf& leaf, const Eigen::Vector2d& gripper, double radius,
                                 double tol = 1e-3) {
  const Eigen::Vector2d rel = gripper - leaf.hinge;
  const double dist = rel.norm();
  if (dist >= leaf.length + radius) return leaf.rest_angle;
  // Disc over the hinge: the leaf cannot move either way.
  if (dist <= radius) return leaf.angle;

  const double phi = std::atan2(rel.y(), rel.x());
  double side_offset = wrap_angle(leaf.angle - phi);
  if (side_offset == 0.0) side_offset = wrap_angle(leaf.rest_angle - phi);
  const double side = side_offset >= 0.0 ? 1.0 : -1.0;

  auto overlaps = [&](double t) { return leaf.ellipse_at(phi + side * t).overlaps_disc(gripper, radius); };
  double boundary;
  if (!overlaps(0.0)) {
    boundary = 0.0;
  } else {
    double lo = 0.0, hi = kPi;
    if (overlaps(hi)) return leaf.angle;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      (overlaps(mid) ? lo : hi) = mid;
    }
    boundary = hi;
  }

  // Free range on this side is phi + side * [boundary, pi].
  const double rest_offset = side * wrap_angle(leaf.rest_angle - phi);
  if (rest_offset >= boundary) return leaf.rest_angle;
  const double target = leaf.rest_angle + wrap_angle(phi + side * boundary - leaf.rest_angle);
  return std::clamp(target, leaf.min_angle, leaf.max_angle);
}

struct ExecutionReport {
  bool success = false;
  double final_occlusion = 1.0;
  double occlusion_threshold = kDefaultOcclusionThreshold;
  /// leaf_angles[leaf][step], one step per trajectory point.
  std::vector<std::vector<double>> leaf_angles;
  Trajectory gripper_path;
};

struct ExecutionOptions {
  double gripper_radius = kDefaultGripperRadius;
  double occlusion_threshold = kDefaultOcclusionThreshold;
  /// Segments are subdivided so the disc never jumps more than this.
  double max_substep_px = 2.0;
};

/// Drives the gripper along `traj` (image pixels), mutating leaf angles.
inline ExecutionReport execute(Scene& scene, const Trajectory& traj, const ExecutionOptions& opt = {}) {
  if (traj.frame() != Frame::image_px || traj.dims() != 2)
    throw InvalidArgument("execution needs a 2D image-pixel trajectory");
  const auto& pts = traj.points();
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double x = pts(i, 0), y = pts(i, 1);
    if (x < 0.0 || y < 0.0 || x > scene.width - 1 || y > scene.height - 1)
      throw OutOfBounds(static_cast<std::size_t>(i),
                        "(" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                            std::to_string(scene.width) + "x" + std::to_string(scene.height));
  }

  ExecutionReport report;
  report.occlusion_threshold = opt.occlusion_threshold;
  report.leaf_angles.assign(scene.leaves.size(), {});
  auto step_to = [&](const Eigen::Vector2d& g) {
    for (auto& leaf : scene.leaves) leaf.angle = resolve_leaf_angle(leaf, g, opt.gripper_radius);
  };
  auto record = [&] {
    for (std::size_t k = 0; k < scene.leaves.size(); ++k) report.leaf_angles[k].push_back(scene.leaves[k].angle);
  };

  Eigen::Vector2d prev = pts.row(0).transpose();
  step_to(prev);
  record();
  for (Eigen::Index i = 1; i < pts.rows(); ++i) {
    const Eigen::Vector2d next = pts.row(i).transpose();
    const double len = (next - prev).norm();
    const int sub = std::max(1, static_cast<int>(std::ceil(len / opt.max_substep_px)));
    for (int s = 1; s <= sub; ++s) step_to(prev + (next - prev) * (static_cast<double>(s) / sub));
    record();
    prev = next;
  }

  report.final_occlusion = occlusion_fraction(scene);
  report.success = report.final_occlusion <= opt.occlusion_threshold;
  report.gripper_path = traj;
  return report;
}

inline ExecutionReport execute(Scene& scene, const Trajectory& traj, double gripper_radius) {
  ExecutionOptions opt;
  opt.gripper_radius = gripper_radius;
  return execute(scene, traj, opt);
}

/// Parameter ranges for scene generation, in pixels of the reference frame.
struct SceneConfig {
  int height = 480;
  int width = 640;
  int min_leaves = 1;
  int max_leaves = 3;
  double grape_radius_min = 28.0, grape_radius_max = 42.0;
  double grape_x_min = 230.0, grape_x_max = 410.0;
  double grape_y_min = 280.0, grape_y_max = 370.0;
  double stem_length_min = 70.0, stem_length_max = 115.0;
  double stem_tilt_max_deg = 15.0;
  double leaf_width_min = 36.0, leaf_width_max = 52.0;
  /// Gap between the principal leaf's hinge and the stem, beyond half its width.
  double hinge_gap_min = 12.0, hinge_gap_max = 40.0;
  /// How far the principal leaf reaches past the stem.
  double overreach_min = 40.0, overreach_max = 80.0;
  double rest_tilt_max_deg = 20.0;
  /// Principal leaf travel: generous when lifted, small when pressed down.
  double principal_limit_deg = 120.0;
  double principal_press_limit_deg = 20.0;
  double distractor_length_min = 45.0, distractor_length_max = 80.0;
  double distractor_width_min = 26.0, distractor_width_max = 40.0;
  double distractor_limit_deg = 60.0;
  double stiffness_min = 0.5, stiffness_max = 2.0;
  double min_rest_occlusion = 0.5;
  /// Leaves must stay within this horizontal band so a centered square crop sees them.
  double visible_margin = 12.0;
  double busy_probability = 0.0;
  double gripper_radius = kDefaultGripperRadius;
  int max_attempts = 1000;

  void validate() const {
    if (min_leaves < 1 || max_leaves < min_leaves) throw InvalidArgument("invalid leaf count range");
    auto range = [](double lo, double hi, const char* what) {
      if (!(lo <= hi) || !(lo >= 0.0)) throw InvalidArgument(std::string("invalid range for ") + what);
    };
    range(grape_radius_min, grape_radius_max, "grape radius");
    range(stem_length_min, stem_length_max, "stem length");
    range(leaf_width_min, leaf_width_max, "leaf width");
    range(hinge_gap_min, hinge_gap_max, "hinge gap");
    range(overreach_min, overreach_max, "overreach");
    range(distractor_length_min, distractor_length_max, "distractor length");
    range(distractor_width_min, distractor_width_max, "distractor width");
    range(stiffness_min, stiffness_max, "stiffness");
    if (height < 64 || width < 64) throw InvalidArgument("scene frame must be at least 64x64");
    if (busy_probability < 0.0 || busy_probability > 1.0) throw InvalidArgument("busy probability must be in [0,1]");
  }
};

/// Direction (+1/-1 in angle) that lifts the leaf tip upward in the image.
inline double lift_direction(const Leaf& leaf) { return std::cos(leaf.rest_angle) > 0.0 ? -1.0 : 1.0; }

/// Index of the leaf covering the most stem samples at rest, if any covers any.
inline std::optional<std::size_t> principal_leaf(const Scene& scene) {
  std::optional<std::size_t> best;
  double best_occ = 0.0;
  for (std::size_t i = 0; i < scene.leaves.size(); ++i) {
    const double occ = leaf_occlusion(scene, scene.leaves[i], scene.leaves[i].rest_angle);
    if (occ > best_occ) {
      best_occ = occ;
      best = i;
    }
  }
  return best;
}

/// Smallest lift (radians, 1 degree resolution) after which the leaf leaves
/// the stem completely uncovered.
inline std::optional<double> clearing_lift(const Scene& scene, const Leaf& leaf) {
  const double s = lift_direction(leaf);
  for (int deg = 0; deg <= 180; ++deg) {
    const double lift = deg * kPi / 180.0;
    const double a = leaf.rest_angle + s * lift;
    if (a < leaf.min_angle || a > leaf.max_angle) return std::nullopt;
    if (leaf_occlusion(scene, leaf, a) == 0.0) return lift;
  }
  return std::nullopt;
}

namespace detail {

inline bool ellipse_visible(const geometry::Ellipse& e, const SceneConfig& cfg) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double hx = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
  const double hy = std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c);
  const double crop = std::min(cfg.height, cfg.width);
  const double x0 = 0.5 * (cfg.width - crop) + cfg.visible_margin;
  const double y0 = 0.5 * (cfg.height - crop) + cfg.visible_margin;
  const double x1 = x0 + crop - 2 * cfg.visible_margin;
  const double y1 = y0 + crop - 2 * cfg.visible_margin;
  return e.center.x() - hx >= x0 && e.center.x() + hx <= x1 && e.center.y() - hy >= y0 && e.center.y() + hy <= y1;
}

inline double deg(double d) { return d * kPi / 180.0; }

}  // namespace detail

/// Deterministic random scene. The leaf count is drawn once per seed; geometry
/// is redrawn until the scene is valid and nontrivial.
inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg = {}) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5ce7e));
  const int leaf_count = static_cast<int>(rng.uniform_int(cfg.min_leaves, cfg.max_leaves));
  const bool busy = rng.bernoulli(cfg.busy_probability);
  const std::uint64_t bg_seed = rng.next();

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Scene sc;
    sc.height = cfg.height;
    sc.width = cfg.width;
    sc.rng_seed = seed;
    sc.background = busy ? Background::busy : Background::plain;
    sc.background_seed = bg_seed;
    sc.grape_radius = rng.uniform(cfg.grape_radius_min, cfg.grape_radius_max);
    sc.grape_center = {rng.uniform(cfg.grape_x_min, cfg.grape_x_max), rng.uniform(cfg.grape_y_min, cfg.grape_y_max)};
    const double tilt = detail::deg(rng.uniform(-cfg.stem_tilt_max_deg, cfg.stem_tilt_max_deg));
    const Eigen::Vector2d up(std::sin(tilt), -std::cos(tilt));
    sc.stem_bottom = sc.grape_center + sc.grape_radius * up;
    sc.stem_top = sc.stem_bottom + rng.uniform(cfg.stem_length_min, cfg.stem_length_max) * up;

    // Principal occluder: hinged beside the stem, reaching across it.
    Leaf p;
    const double side = rng.bernoulli(0.5) ? -1.0 : 1.0;  // -1: hinge left of stem
    p.width = rng.uniform(cfg.leaf_width_min, cfg.leaf_width_max);
    const double gap = 0.5 * p.width + rng.uniform(cfg.hinge_gap_min, cfg.hinge_gap_max);
    const double along = rng.uniform(0.35, 0.75);
    const Eigen::Vector2d normal(-up.y(), up.x());  // perpendicular to the stem
    const Eigen::Vector2d on_stem = sc.stem_bottom + along * (sc.stem_top - sc.stem_bottom);
    p.hinge = on_stem + side * gap * normal;
    const Eigen::Vector2d toward = (on_stem - p.hinge).normalized();
    p.rest_angle = std::atan2(toward.y(), toward.x()) + detail::deg(rng.uniform(-cfg.rest_tilt_max_deg, cfg.rest_tilt_max_deg));
    p.length = gap / std::max(0.3, std::cos(p.rest_angle - std::atan2(toward.y(), toward.x()))) +
               rng.uniform(cfg.overreach_min, cfg.overreach_max);
    p.stiffness = rng.uniform(cfg.stiffness_min, cfg.stiffness_max);
    p.angle = p.rest_angle;
    if (lift_direction(p) > 0.0) {
      p.min_angle = p.rest_angle - detail::deg(cfg.principal_press_limit_deg);
      p.max_angle = p.rest_angle + detail::deg(cfg.principal_limit_deg);
    } else {
      p.min_angle = p.rest_angle - detail::deg(cfg.principal_limit_deg);
      p.max_angle = p.rest_angle + detail::deg(cfg.principal_press_limit_deg);
    }
    if (p.length <= p.width) continue;
    sc.leaves.push_back(p);

    bool ok = true;
    for (int k = 1; k < leaf_count && ok; ++k) {
      bool placed = false;
      for (int tries = 0; tries < 50 && !placed; ++tries) {
        Leaf d;
        d.length = rng.uniform(cfg.distractor_length_min, cfg.distractor_length_max);
        d.width = std::min(rng.uniform(cfg.distractor_width_min, cfg.distractor_width_max), 0.8 * d.length);
        d.hinge = {rng.uniform(0.0, cfg.width), rng.uniform(0.0, cfg.height)};
        d.rest_angle = rng.uniform(-kPi, kPi);
        d.stiffness = rng.uniform(cfg.stiffness_min, cfg.stiffness_max);
        d.min_angle = d.rest_angle - detail::deg(cfg.distractor_limit_deg);
        d.max_angle = d.rest_angle + detail::deg(cfg.distractor_limit_deg);
        d.angle = d.rest_angle;
        // Out of reach of the principal sweep and clear of the stem.
        if ((d.hinge - p.hinge).norm() < d.length + p.length + cfg.gripper_radius + 10.0) continue;
        if (geometry::point_segment_distance(d.hinge, sc.stem_bottom, sc.stem_top) < d.length + 10.0) continue;
        if (!detail::ellipse_visible(d.ellipse(), cfg)) continue;
        bool clash = false;
        for (std::size_t j = 1; j < sc.leaves.size(); ++j)
          if ((d.hinge - sc.leaves[j].hinge).norm() < 0.5 * (d.length + sc.leaves[j].length)) clash = true;
        if (clash) continue;
        sc.leaves.push_back(d);
        placed = true;
      }
      ok = placed;
    }
    if (!ok) continue;

    const auto& lp = sc.leaves.front();
    if (!detail::ellipse_visible(lp.ellipse(), cfg)) continue;
    if (leaf_occlusion(sc, lp, lp.rest_angle) < cfg.min_rest_occlusion) continue;
    bool distractor_occludes = false;
    for (std::size_t j = 1; j < sc.leaves.size(); ++j)
      if (leaf_occlusion(sc, sc.leaves[j], sc.leaves[j].rest_angle) > 0.0) distractor_occludes = true;
    if (distractor_occludes) continue;
    const auto lift = clearing_lift(sc, lp);
    if (!lift || *lift > detail::deg(cfg.principal_limit_deg - 30.0)) continue;
    const auto held = lp.ellipse_at(lp.rest_angle + lift_direction(lp) * (*lift + detail::deg(20.0)));
    if (!detail::ellipse_visible(held, cfg)) continue;
    return sc;
  }
  throw ExhaustedAttempts("no valid scene for seed " + std::to_string(seed) + " after " +
                          std::to_string(cfg.max_attempts) + " attempts");
}

struct Palette {
  Rgb background{238, 238, 232};
  Rgb grape{104, 44, 122};
  Rgb stem{116, 78, 38};
  Rgb leaf{58, 142, 52};
};

/// Fixed palette with a small per-scene hue jitter.
inline Palette scene_palette(const Scene& scene) {
  Rng rng(mix_seed(scene.rng_seed, 0xc010));
  Palette p;
  const double jitter = rng.uniform(-0.03, 0.03);
  p.grape = shift_hue(p.grape, jitter);
  p.stem = shift_hue(p.stem, 0.5 * jitter);
  p.leaf = shift_hue(p.leaf, jitter);
  return p;
}

/// Flat-shaded raster of the scene at its current leaf angles. Pixel (row i,
/// column j) samples the point (j, i) of the scene frame scaled to `size`.
inline RgbImage render(const Scene& scene, int height = 480, int width = 640) {
  if (height < 64 || width < 64) throw InvalidArgument("render size must be at least 64x64");
  const auto pal = scene_palette(scene);
  RgbImage img(height, width, pal.background);
  const double sx = static_cast<double>(width) / scene.width;
  const double sy = static_cast<double>(height) / scene.height;
  auto to_scene = [&](int row, int col) { return Eigen::Vector2d(col / sx, row / sy); };

  if (scene.background == Background::busy) {
    Rng rng(scene.background_seed);
    img = RgbImage(height, width,
                   {static_cast<std::uint8_t>(rng.uniform_int(90, 200)), static_cast<std::uint8_t>(rng.uniform_int(90, 200)),
                    static_cast<std::uint8_t>(rng.uniform_int(90, 200))});
    for (int k = 0; k < 60; ++k) {
      const Rgb c{static_cast<std::uint8_t>(rng.uniform_int(20, 235)), static_cast<std::uint8_t>(rng.uniform_int(20, 235)),
                  static_cast<std::uint8_t>(rng.uniform_int(20, 235))};
      const double cx = rng.uniform(0, scene.width), cy = rng.uniform(0, scene.height);
      const double rx = rng.uniform(8, 70), ry = rng.uniform(8, 70);
      const bool box = rng.bernoulli(0.5);
      for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
          const auto q = to_scene(i, j);
          const double dx = (q.x() - cx) / rx, dy = (q.y() - cy) / ry;
          if (box ? (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) : (dx * dx + dy * dy <= 1.0)) img.set(i, j, c);
        }
    }
  }

  auto paint = [&](double x_lo, double x_hi, double y_lo, double y_hi, Rgb color, auto&& inside) {
    const int j0 = std::max(0, static_cast<int>(std::floor(x_lo * sx)));
    const int j1 = std::min(width - 1, static_cast<int>(std::ceil(x_hi * sx)));
    const int i0 = std::max(0, static_cast<int>(std::floor(y_lo * sy)));
    const int i1 = std::min(height - 1, static_cast<int>(std::ceil(y_hi * sy)));
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j)
        if (inside(to_scene(i, j))) img.set(i, j, color);
  };

  const auto& gc = scene.grape_center;
  const double gr = scene.grape_radius;
  paint(gc.x() - gr, gc.x() + gr, gc.y() - gr, gc.y() + gr, pal.grape,
        [&](const Eigen::Vector2d& q) { return (q - gc).squaredNorm() <= gr * gr; });

  constexpr double kStemHalfWidth = 3.0;
  const auto& a = scene.stem_bottom;
  const auto& b = scene.stem_top;
  paint(std::min(a.x(), b.x()) - kStemHalfWidth, std::max(a.x(), b.x()) + kStemHalfWidth,
        std::min(a.y(), b.y()) - kStemHalfWidth, std::max(a.y(), b.y()) + kStemHalfWidth, pal.stem,
        [&](const Eigen::Vector2d& q) { return geometry::point_segment_distance(q, a, b) <= kStemHalfWidth; });

  for (std::size_t k = 0; k < scene.leaves.size(); ++k) {
    const auto e = scene.leaves[k].ellipse();
    const Rgb shade = shift_hue(pal.leaf, 0.015 * static_cast<double>(k));
    paint(e.center.x() - e.a, e.center.x() + e.a, e.center.y() - e.a, e.center.y() + e.a, shade,
          [&](const Eigen::Vector2d& q) { return e.contains(q); });
  }
  return img;
}

struct OracleOptions {
  double gripper_radius = kDefaultGripperRadius;
  double occlusion_threshold = kDefaultOcclusionThreshold;
  int points = 50;
  int max_jitters = 20;
  /// Extra lift beyond the clearing angle at the hold point.
  double hold_margin_deg = 22.0;
};

/// Scripted demonstration: a quadratic Bezier arc around the principal leaf's
/// hinge that starts beside the leaf, lifts it off the stem and holds it there.
inline Trajectory oracle_demo(const Scene& scene, std::uint64_t seed, const OracleOptions& opt = {}) {
  const auto idx = principal_leaf(scene);
  if (!idx) throw NoOccludingLeaf("no leaf covers the stem at rest");
  Leaf leaf = scene.leaves[*idx];
  leaf.angle = leaf.rest_angle;
  const auto lift = clearing_lift(scene, leaf);
  if (!lift) throw OracleFailed("principal leaf cannot be lifted clear of the stem within its limits");
  const double s = lift_direction(leaf);
  const double r = opt.gripper_radius;

  // Angular offset that keeps the gripper disc just beside the leaf at radius rho.
  auto beside = [&](double rho) {
    const double a = 0.5 * leaf.length, b = 0.5 * leaf.width;
    const double u = std::clamp((rho - a) / a, -1.0, 1.0);
    const double half = b * std::sqrt(1.0 - u * u);
    return std::atan2(half + r, rho);
  };

  Rng rng(mix_seed(seed, 0x0dac1e));
  for (int attempt = 0; attempt < opt.max_jitters; ++attempt) {
    const double rho = leaf.length * (0.62 + rng.uniform(-0.04, 0.04));
    const double margin = detail::deg(opt.hold_margin_deg + 2.0 * attempt + rng.uniform(-3.0, 3.0));
    const double travel = s > 0.0 ? leaf.max_angle - leaf.rest_angle : leaf.rest_angle - leaf.min_angle;
    const double hold = std::min(*lift + margin, travel - detail::deg(2.0));
    const double phi0 = leaf.rest_angle - s * (beside(rho) + detail::deg(6.0));
    const double phi2 = leaf.rest_angle + s * hold - s * beside(rho);
    const double span = std::abs(phi2 - phi0);
    const double mid = 0.5 * (phi0 + phi2);
    const double reach = rho / std::max(0.4, std::cos(0.5 * span));

    const Eigen::Vector2d p0 = leaf.hinge + rho * Eigen::Vector2d(std::cos(phi0), std::sin(phi0));
    const Eigen::Vector2d p2 = leaf.hinge + rho * Eigen::Vector2d(std::cos(phi2), std::sin(phi2));
    const Eigen::Vector2d p1 = leaf.hinge + reach * Eigen::Vector2d(std::cos(mid), std::sin(mid)) +
                               Eigen::Vector2d(rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0));

    Eigen::MatrixXd pts(opt.points, 2);
    for (int j = 0; j < opt.points; ++j) {
      const double t = static_cast<double>(j) / (opt.points - 1);
      Eigen::Vector2d q = (1 - t) * (1 - t) * p0 + 2 * (1 - t) * t * p1 + t * t * p2;
      q.x() = std::clamp(q.x(), 0.0, static_cast<double>(scene.width - 1));
      q.y() = std::clamp(q.y(), 0.0, static_cast<double>(scene.height - 1));
      pts.row(j) = q.transpose();
    }
    Trajectory demo(std::move(pts), Frame::image_px);

    Scene trial = scene;
    trial.reset_leaves();
    ExecutionOptions eo;
    eo.gripper_radius = opt.gripper_radius;
    eo.occlusion_threshold = opt.occlusion_threshold;
    if (execute(trial, demo, eo).success) return demo;
  }
  throw OracleFailed("no successful sweep after " + std::to_string(opt.max_jitters) + " jitters");
}

inline nlohmann::json to_json(const Leaf& l) {
  return {{"hinge", {l.hinge.x(), l.hinge.y()}},
          {"length", l.length},
          {"width", l.width},
          {"rest_angle", l.rest_angle},
          {"stiffness", l.stiffness},
          {"angle_limits", {l.min_angle, l.max_angle}},
          {"current_angle", l.angle}};
}

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json leaves = nlohmann::json::array();
  for (const auto& l : s.leaves) leaves.push_back(to_json(l));
  return {{"size", {s.height, s.width}},
          {"grape_center", {s.grape_center.x(), s.grape_center.y()}},
          {"grape_radius", s.grape_radius},
          {"stem", {{s.stem_bottom.x(), s.stem_bottom.y()}, {s.stem_top.x(), s.stem_top.y()}}},
          {"leaves", std::move(leaves)},
          {"background", {{"kind", s.background == Background::busy ? "busy" : "plain"}, {"seed", s.background_seed}}},
          {"rng_seed", s.rng_seed}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  auto v2 = [](const nlohmann::json& a) { return Eigen::Vector2d(a.at(0).get<double>(), a.at(1).get<double>()); };
  try {
    Scene s;
    s.height = j.at("size").at(0).get<int>();
    s.width = j.at("size").at(1).get<int>();
    s.grape_center = v2(j.at("grape_center"));
    s.grape_radius = j.at("grape_radius").get<double>();
    s.stem_bottom = v2(j.at("stem").at(0));
    s.stem_top = v2(j.at("stem").at(1));
    for (const auto& lj : j.at("leaves")) {
      Leaf l;
      l.hinge = v2(lj.at("hinge"));
      l.length = lj.at("length").get<double>();
      l.width = lj.at("width").get<double>();
      l.rest_angle = lj.at("rest_angle").get<double>();
      l.stiffness = lj.at("stiffness").get<double>();
      l.min_angle = lj.at("angle_limits").at(0).get<double>();
      l.max_angle = lj.at("angle_limits").at(1).get<double>();
      l.angle = lj.at("current_angle").get<double>();
      l.validate();
      s.leaves.push_back(l);
    }
    const auto& bg = j.at("background");
    s.background = bg.at("kind").get<std::string>() == "busy" ? Background::busy : Background::plain;
    s.background_seed = bg.at("seed").get<std::uint64_t>();
    s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene record: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("scene record: ") + e.what());
  }
}

inline nlohmann::json to_json(const ExecutionReport& r) {
  return {{"success", r.success},
          {"final_occlusion", r.final_occlusion},
          {"occlusion_threshold", r.occlusion_threshold},
          {"leaf_angles", r.leaf_angles},
          {"gripper_path", to_json(r.gripper_path)}};
}

}  // namespace vinedmp
