#pragma once

// Joint image + trajectory augmentation. Geometric transforms are a single
// homography applied to both; photometric jitter and noise touch pixels only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vinedmp/color.hpp"
#include "vinedmp/errors.hpp"
#include "vinedmp/image.hpp"
#include "vinedmp/rng.hpp"
#include "vinedmp/sample.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

struct AugmentationConfig {
  double translation_frac = 0.10;
  double rotation_deg = 15.0;
  double scale_lo = 0.85;
  double scale_hi = 1.15;
  double hflip_prob = 0.5;
  double perspective_distortion = 0.15;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  /// Turns.
  double hue = 0.05;
  /// 8-bit intensity units.
  double gaussian_noise_sigma = 5.0;
  int factor = 100;

  /// Everything off: identity geometry, neutral photometrics.
  static AugmentationConfig none(int factor = 1) {
    AugmentationConfig c;
    c.translation_frac = c.rotation_deg = c.hflip_prob = c.perspective_distortion = 0.0;
    c.scale_lo = c.scale_hi = 1.0;
    c.brightness = c.contrast = c.saturation = c.hue = c.gaussian_noise_sigma = 0.0;
    c.factor = factor;
    return c;
  }

  void validate() const {
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) throw InvalidArgument("scale range must satisfy 0 < lo <= hi");
    if (hflip_prob < 0.0 || hflip_prob > 1.0) throw InvalidArgument("hflip probability must be in [0,1]");
    if (perspective_distortion < 0.0 || perspective_distortion >= 1.0)
      throw InvalidArgument("perspective distortion must be in [0,1)");
    if (translation_frac < 0.0 || rotation_deg < 0.0 || brightness < 0.0 || contrast < 0.0 || saturation < 0.0 ||
        hue < 0.0 || gaussian_noise_sigma < 0.0)
      throw InvalidArgument("augmentation ranges must be nonnegative");
    if (brightness >= 1.0 || contrast >= 1.0 || saturation >= 1.0) throw InvalidArgument("jitter factors must be < 1");
    if (factor < 0) throw InvalidArgument("augmentation factor must be nonnegative");
  }
};

struct GeometricTransform {
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
    const Eigen::Vector3d q = H * Eigen::Vector3d(p.x(), p.y(), 1.0);
    if (q.z() < 1e-9) throw DegenerateHomography("point maps to or beyond the line at infinity");
    return q.head<2>() / q.z();
  }
};

struct PhotometricParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  bool neutral() const {
    return brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0;
  }
};

struct AugmentationParams {
  GeometricTransform geometry;
  PhotometricParams photometric;
};

/// Homography taking the four source corners to the four destination corners.
inline Eigen::Matrix3d homography_from_corners(const std::array<Eigen::Vector2d, 4>& src,
                                               const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> A;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[static_cast<std::size_t>(i)].x(), y = src[static_cast<std::size_t>(i)].y();
    const double u = dst[static_cast<std::size_t>(i)].x(), v = dst[static_cast<std::size_t>(i)].y();
    A.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = A.fullPivLu().solve(b);
  Eigen::Matrix3d H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return H;
}

/// Draws one transform. H = flip * perspective * rotation * scale * translation,
/// with rotation and scale about the image center.
inline AugmentationParams sample_transform(const AugmentationConfig& cfg, std::uint64_t seed, int height, int width) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xa06));
  const double w = width, h = height;
  const double cx = 0.5 * (w - 1.0), cy = 0.5 * (h - 1.0);

  // Every draw happens unconditionally so parameter streams stay aligned
  // across configs.
  const double tx = rng.uniform(-1.0, 1.0) * cfg.translation_frac * w;
  const double ty = rng.uniform(-1.0, 1.0) * cfg.translation_frac * h;
  const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const double theta = rng.uniform(-1.0, 1.0) * cfg.rotation_deg * std::numbers::pi / 180.0;
  std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(0, 0), Eigen::Vector2d(w - 1, 0),
                                         Eigen::Vector2d(w - 1, h - 1), Eigen::Vector2d(0, h - 1)};
  std::array<Eigen::Vector2d, 4> moved = corners;
  for (auto& c : moved) {
    const double dx = rng.uniform(-1.0, 1.0) * cfg.perspective_distortion * 0.5 * w;
    const double dy = rng.uniform(-1.0, 1.0) * cfg.perspective_distortion * 0.5 * h;
    c += Eigen::Vector2d(dx, dy);
  }
  const bool flip = rng.uniform() < cfg.hflip_prob;

  PhotometricParams ph;
  ph.brightness = 1.0 + rng.uniform(-1.0, 1.0) * cfg.brightness;
  ph.contrast = 1.0 + rng.uniform(-1.0, 1.0) * cfg.contrast;
  ph.saturation = 1.0 + rng.uniform(-1.0, 1.0) * cfg.saturation;
  ph.hue = rng.uniform(-1.0, 1.0) * cfg.hue;
  ph.noise_sigma = cfg.gaussian_noise_sigma;
  ph.noise_seed = rng.next();

  Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
  T(0, 2) = tx;
  T(1, 2) = ty;
  Eigen::Matrix3d S;
  S << scale, 0, cx * (1 - scale), 0, scale, cy * (1 - scale), 0, 0, 1;
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix3d R;
  R << c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1;
  const Eigen::Matrix3d P =
      cfg.perspective_distortion > 0.0 ? homography_from_corners(corners, moved) : Eigen::Matrix3d::Identity();
  Eigen::Matrix3d F = Eigen::Matrix3d::Identity();
  if (flip) {
    F(0, 0) = -1.0;
    F(0, 2) = w - 1.0;
  }

  AugmentationParams out;
  out.geometry.H = F * P * R * S * T;
  if (std::abs(out.geometry.H.determinant()) <= 1e-12) throw DegenerateHomography("sampled transform is singular");
  out.photometric = ph;
  return out;
}

/// Inverse-mapped bilinear warp; samples falling outside the source are filled.
inline RgbImage warp_image(const RgbImage& src, const Eigen::Matrix3d& H, Rgb fill) {
  if (H.isIdentity(0.0)) return src;
  const Eigen::Matrix3d inv = H.inverse();
  RgbImage out(src.height, src.width, fill);
  const double xmax = src.width - 1, ymax = src.height - 1;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(x, y, 1.0);
      if (q.z() <= 0.0) continue;
      const double sx = q.x() / q.z(), sy = q.y() / q.z();
      if (!(sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax)) continue;
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      auto* o = out.at(y, x);
      const auto* p00 = src.at(y0, x0);
      const auto* p01 = src.at(y0, x1);
      const auto* p10 = src.at(y1, x0);
      const auto* p11 = src.at(y1, x1);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * p00[ch] + fx * p01[ch]) + fy * ((1 - fx) * p10[ch] + fx * p11[ch]);
        o[ch] = to_byte(v);
      }
    }
  }
  return out;
}

/// round(sigma * z) for standard normal z. Adding Gaussian noise to an 8-bit
/// value and rounding only depends on this integer, so it is drawn directly
/// from its exact distribution instead of rounding a continuous sample.
class RoundedGaussian {
 public:
  explicit RoundedGaussian(double sigma) {
    const int span = static_cast<int>(std::ceil(9.0 * sigma)) + 1;
    lo_ = -span;
    auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    for (int k = -span; k < span; ++k) cdf_.push_back(phi((k + 0.5) / sigma));
    cdf_.push_back(1.0);
    // guide_[g] = first index whose cdf exceeds g / kGuide.
    guide_.resize(kGuide);
    std::size_t i = 0;
    for (std::size_t g = 0; g < kGuide; ++g) {
      while (cdf_[i] <= static_cast<double>(g) / kGuide) ++i;
      guide_[g] = static_cast<std::uint32_t>(i);
    }
  }

  int operator()(Rng& rng) const {
    const double u = rng.uniform();
    std::size_t i = guide_[static_cast<std::size_t>(u * kGuide)];
    while (cdf_[i] <= u) ++i;
    return lo_ + static_cast<int>(i);
  }

 private:
  static constexpr std::size_t kGuide = 256;
  std::vector<double> cdf_;
  std::vector<std::uint32_t> guide_;
  int lo_ = 0;
};

/// Brightness, contrast, saturation, hue (in that order), then clipped noise.
inline void apply_photometric(RgbImage& img, const PhotometricParams& p) {
  const std::size_t n = img.data.size() / 3;
  if (!p.neutral()) {
    std::vector<double> v(img.data.begin(), img.data.end());
    auto clip = [](double x) { return std::clamp(x, 0.0, 255.0); };
    for (auto& x : v) x = clip(x * p.brightness);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += 0.299 * v[3 * i] + 0.587 * v[3 * i + 1] + 0.114 * v[3 * i + 2];
    mean /= static_cast<double>(n);
    for (auto& x : v) x = clip((x - mean) * p.contrast + mean);
    for (std::size_t i = 0; i < n; ++i) {
      const double gray = 0.299 * v[3 * i] + 0.587 * v[3 * i + 1] + 0.114 * v[3 * i + 2];
      for (int c = 0; c < 3; ++c) v[3 * i + c] = clip((v[3 * i + c] - gray) * p.saturation + gray);
    }
    if (p.hue != 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        auto hsv = rgb_to_hsv(v[3 * i] / 255.0, v[3 * i + 1] / 255.0, v[3 * i + 2] / 255.0);
        hsv.h += p.hue;
        const auto rgb = hsv_to_rgb(hsv);
        for (int c = 0; c < 3; ++c) v[3 * i + c] = rgb[static_cast<std::size_t>(c)] * 255.0;
      }
    }
    for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = to_byte(v[i]);
  }
  if (p.noise_sigma > 0.0) {
    Rng rng(p.noise_seed);
    const RoundedGaussian noise(p.noise_sigma);
    for (auto& b : img.data) b = static_cast<std::uint8_t>(std::clamp(b + noise(rng), 0, 255));
  }
}

/// Maps trajectory points through H, clamping them into the frame.
inline Trajectory transform_trajectory(const Trajectory& traj, const GeometricTransform& g, int height, int width) {
  Eigen::MatrixXd out(traj.points().rows(), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Vector2d q = g.apply(traj.points().row(i).transpose());
    q.x() = std::clamp(q.x(), 0.0, static_cast<double>(width - 1));
    q.y() = std::clamp(q.y(), 0.0, static_cast<double>(height - 1));
    out.row(i) = q.transpose();
  }
  return Trajectory(std::move(out), traj.frame(), traj.timestamps());
}

inline std::pair<RgbImage, Trajectory> apply(const RgbImage& image, const Trajectory& traj,
                                             const AugmentationParams& params, Rgb fill = {238, 238, 232}) {
  if (traj.frame() != Frame::image_px || traj.dims() != 2) throw InvalidArgument("augmentation needs an image-pixel trajectory");
  Trajectory moved = transform_trajectory(traj, params.geometry, image.height, image.width);
  RgbImage out = warp_image(image, params.geometry.H, fill);
  apply_photometric(out, params.photometric);
  return {std::move(out), std::move(moved)};
}

inline std::uint64_t replica_seed(std::uint64_t base_seed, const std::string& id, int replica) {
  return base_seed + stable_hash(id + "#" + std::to_string(replica));
}

inline std::string replica_id(const std::string& id, int replica) { return id + "_aug" + std::to_string(replica); }

/// Streams every original followed by its `factor` replicas to `sink`. Output
/// order depends only on the input order.
inline void for_each_augmented(const std::vector<Sample>& samples, const AugmentationConfig& cfg,
                               std::uint64_t base_seed, const std::function<void(Sample&&)>& sink,
                               Rgb fill = {238, 238, 232}) {
  if (samples.empty()) throw InvalidArgument("nothing to augment");
  cfg.validate();
  for (const auto& s : samples) {
    sink(Sample(s));
    for (int r = 0; r < cfg.factor; ++r) {
      const auto params = sample_transform(cfg, replica_seed(base_seed, s.id, r), s.image.height, s.image.width);
      auto [img, traj] = apply(s.image, s.trajectory, params, fill);
      Sample out;
      out.id = replica_id(s.id, r);
      out.image = std::move(img);
      out.trajectory = std::move(traj);
      out.split = s.split;
      out.parent = s.id;
      sink(std::move(out));
    }
  }
}

inline std::vector<Sample> augment_dataset(const std::vector<Sample>& samples, const AugmentationConfig& cfg,
                                           std::uint64_t base_seed) {
  std::vector<Sample> out;
  out.reserve(samples.size() * static_cast<std::size_t>(cfg.factor + 1));
  for_each_augmented(samples, cfg, base_seed, [&](Sample&& s) { out.push_back(std::move(s)); });
  return out;
}

inline nlohmann::json to_json(const AugmentationConfig& c) {
  return {{"translation_frac", c.translation_frac},
          {"rotation_deg", c.rotation_deg},
          {"scale_range", {c.scale_lo, c.scale_hi}},
          {"hflip_prob", c.hflip_prob},
          {"perspective_distortion", c.perspective_distortion},
          {"brightness", c.brightness},
          {"contrast", c.contrast},
          {"saturation", c.saturation},
          {"hue", c.hue},
          {"gaussian_noise_sigma", c.gaussian_noise_sigma},
          {"factor", c.factor}};
}

inline AugmentationConfig augmentation_config_from_json(const nlohmann::json& j) {
  AugmentationConfig c;
  try {
    c.translation_frac = j.value("translation_frac", c.translation_frac);
    c.rotation_deg = j.value("rotation_deg", c.rotation_deg);
    if (j.contains("scale_range")) {
      c.scale_lo = j["scale_range"].at(0).get<double>();
      c.scale_hi = j["scale_range"].at(1).get<double>();
    }
    c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
    c.perspective_distortion = j.value("perspective_distortion", c.perspective_distortion);
    c.brightness = j.value("brightness", c.brightness);
    c.contrast = j.value("contrast", c.contrast);
    c.saturation = j.value("saturation", c.saturation);
    c.hue = j.value("hue", c.hue);
    c.gaussian_noise_sigma = j.value("gaussian_noise_sigma", c.gaussian_noise_sigma);
    c.factor = j.value("factor", c.factor);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("augmentation config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace vinedmp
