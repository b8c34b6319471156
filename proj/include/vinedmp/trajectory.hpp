#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vinedmp/errors.hpp"

namespace vinedmp {

enum class Frame { image_px, normalized, task_plane_m };

inline std::string to_string(Frame f) {
  switch (f) {
    case Frame::image_px: return "image_px";
    case Frame::normalized: return "normalized";
    case Frame::task_plane_m: return "task_plane_m";
  }
  return "image_px";
}

inline Frame frame_from_string(const std::string& s) {
  if (s == "image_px") return Frame::image_px;
  if (s == "normalized") return Frame::normalized;
  if (s == "task_plane_m") return Frame::task_plane_m;
  throw FormatError("unknown trajectory frame '" + s + "'");
}

/// Ordered points, one per row, tagged with the frame they live in.
class Trajectory {
 public:
  Trajectory() = default;

  Trajectory(Eigen::MatrixXd points, Frame frame,
             std::optional<std::vector<double>> timestamps = std::nullopt)
      : points_(std::move(points)), frame_(frame), timestamps_(std::move(timestamps)) {
    validate();
  }

  static Trajectory from_points(const std::vector<Eigen::Vector2d>& pts, Frame frame) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    return Trajectory(std::move(m), frame);
  }

  const Eigen::MatrixXd& points() const noexcept { return points_; }
  Frame frame() const noexcept { return frame_; }
  const std::optional<std::vector<double>>& timestamps() const noexcept { return timestamps_; }

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  Eigen::Index dims() const noexcept { return points_.cols(); }
  Eigen::VectorXd point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }

  /// Length of the diagonal of the axis-aligned bounding box.
  double bbox_diagonal() const {
    return (points_.colwise().maxCoeff() - points_.colwise().minCoeff()).norm();
  }

 private:
  void validate() const {
    if (points_.rows() < 2) throw InvalidArgument("trajectory needs at least 2 points");
    if (points_.cols() < 1) throw InvalidArgument("trajectory points have no coordinates");
    if (!points_.allFinite()) throw InvalidArgument("trajectory has non-finite coordinates");
    if (timestamps_) {
      if (timestamps_->size() != static_cast<std::size_t>(points_.rows()))
        throw InvalidArgument("timestamp count does not match point count");
      for (std::size_t i = 1; i < timestamps_->size(); ++i)
        if (!((*timestamps_)[i] > (*timestamps_)[i - 1]))
          throw InvalidArgument("timestamps must be strictly increasing");
    }
  }

  Eigen::MatrixXd points_;
  Frame frame_ = Frame::image_px;
  std::optional<std::vector<double>> timestamps_;
};

/// Cumulative arc length normalized to [0, 1]. Throws DegenerateDemo when the
/// path has (numerically) zero length.
inline std::vector<double> arc_length_phases(const Eigen::MatrixXd& pts) {
  const auto n = static_cast<std::size_t>(pts.rows());
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const auto a = static_cast<Eigen::Index>(i);
    s[i] = s[i - 1] + (pts.row(a) - pts.row(a - 1)).norm();
  }
  if (n == 0 || s.back() <= 1e-12) throw DegenerateDemo("all trajectory points coincide");
  const double total = s.back();
  for (auto& v : s) v /= total;
  s.back() = 1.0;
  return s;
}

/// Resamples to `count` points uniformly spaced in arc length.
inline Eigen::MatrixXd resample_by_arc_length(const Eigen::MatrixXd& pts, std::size_t count) {
  if (count < 2) throw InvalidArgument("resampling needs at least 2 output points");
  const auto s = arc_length_phases(pts);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count), pts.cols());
  std::size_t seg = 1;
  for (std::size_t j = 0; j < count; ++j) {
    const double target = static_cast<double>(j) / static_cast<double>(count - 1);
    while (seg + 1 < s.size() && s[seg] < target) ++seg;
    const double span = s[seg] - s[seg - 1];
    const double u = span > 0.0 ? std::clamp((target - s[seg - 1]) / span, 0.0, 1.0) : 0.0;
    const auto a = static_cast<Eigen::Index>(seg);
    out.row(static_cast<Eigen::Index>(j)) = (1.0 - u) * pts.row(a - 1) + u * pts.row(a);
  }
  return out;
}

inline Trajectory resample_by_arc_length(const Trajectory& t, std::size_t count) {
  return Trajectory(resample_by_arc_length(t.points(), count), t.frame());
}

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.points().rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index d = 0; d < t.points().cols(); ++d) row.push_back(t.points()(i, d));
    pts.push_back(std::move(row));
  }
  nlohmann::json j;
  j["frame"] = to_string(t.frame());
  j["points"] = std::move(pts);
  if (t.timestamps()) j["timestamps"] = *t.timestamps();
  return j;
}

inline Eigen::MatrixXd points_from_json(const nlohmann::json& pts) {
  if (!pts.is_array() || pts.empty()) throw FormatError("'points' must be a non-empty array");
  const auto dims = pts.front().is_array() ? pts.front().size() : 0;
  if (dims == 0) throw FormatError("points must be coordinate arrays");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& row = pts[i];
    if (!row.is_array() || row.size() != dims) throw FormatError("ragged point array");
    for (std::size_t d = 0; d < dims; ++d) {
      if (!row[d].is_number()) throw FormatError("non-numeric coordinate");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = row[d].get<double>();
    }
  }
  return m;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("frame") || !j.contains("points"))
    throw FormatError("trajectory record needs 'frame' and 'points'");
  std::optional<std::vector<double>> ts;
  if (j.contains("timestamps") && !j["timestamps"].is_null())
    ts = j["timestamps"].get<std::vector<double>>();
  try {
    return Trajectory(points_from_json(j["points"]), frame_from_string(j["frame"].get<std::string>()),
                      std::move(ts));
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
}

}  // namespace vinedmp
