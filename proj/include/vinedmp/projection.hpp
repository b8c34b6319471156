#pragma once

// Image plane <-> task plane mapping for a rectified pinhole camera.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vinedmp/errors.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

struct CameraIntrinsics {
  double cx = 0.0;
  double cy = 0.0;
  double fx = 1.0;
  double fy = 1.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("focal lengths must be positive");
  }
};

/// World-from-camera pose.
struct CameraPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  void validate(double tol = 1e-9) const {
    if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
      throw InvalidArgument("camera rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol) throw InvalidArgument("camera rotation is not proper");
  }
};

struct TaskPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();

  void validate(double tol = 1e-9) const {
    if (std::abs(normal.norm() - 1.0) > tol) throw InvalidArgument("task plane normal must be unit length");
  }
};

struct CameraRig {
  CameraIntrinsics intrinsics;
  CameraPose pose;
  TaskPlane plane;

  void validate() const {
    intrinsics.validate();
    pose.validate();
    plane.validate();
  }
};

inline constexpr double kProjectionEpsilon = 1e-9;

/// Intersects the viewing ray of pixel (x, y) with the task plane; returns the
/// world-frame point.
inline Eigen::Vector3d pixel_to_plane(const Eigen::Vector2d& px, const CameraIntrinsics& intr,
                                      const CameraPose& pose, const TaskPlane& plane,
                                      double eps = kProjectionEpsilon) {
  const Eigen::Vector3d ray((px.x() - intr.cx) / intr.fx, (px.y() - intr.cy) / intr.fy, 1.0);
  const Eigen::Vector3d n_cam = pose.rotation.transpose() * plane.normal;
  const Eigen::Vector3d p_cam = pose.rotation.transpose() * (plane.point - pose.position);
  const double denom = n_cam.dot(ray);
  if (std::abs(denom) <= eps) throw RayParallelToPlane("viewing ray is parallel to the task plane");
  const double depth = n_cam.dot(p_cam) / denom;
  if (!(depth > 0.0)) throw PointBehindCamera("task plane intersection lies behind the camera");
  return pose.rotation * (depth * ray) + pose.position;
}

inline Eigen::Vector3d pixel_to_plane(const Eigen::Vector2d& px, const CameraRig& rig) {
  return pixel_to_plane(px, rig.intrinsics, rig.pose, rig.plane);
}

inline Eigen::Vector2d plane_to_pixel(const Eigen::Vector3d& p, const CameraIntrinsics& intr, const CameraPose& pose,
                                      double eps = kProjectionEpsilon) {
  const Eigen::Vector3d c = pose.rotation.transpose() * (p - pose.position);
  if (!(c.z() > eps)) throw PointBehindCamera("point is not in front of the camera");
  return {intr.fx * c.x() / c.z() + intr.cx, intr.fy * c.y() / c.z() + intr.cy};
}

/// Maps an image-plane trajectory onto the task plane, keeping timestamps.
inline Trajectory trajectory_to_plane(const Trajectory& traj, const CameraRig& rig) {
  if (traj.frame() != Frame::image_px) throw InvalidArgument("trajectory must be in image pixels");
  if (traj.dims() != 2) throw InvalidArgument("image trajectory must be 2D");
  Eigen::MatrixXd out(traj.points().rows(), 3);
  for (Eigen::Index i = 0; i < traj.points().rows(); ++i) {
    const Eigen::Vector2d px = traj.points().row(i).transpose();
    const auto idx = static_cast<std::size_t>(i);
    try {
      out.row(i) = pixel_to_plane(px, rig).transpose();
    } catch (const RayParallelToPlane& e) {
      throw AtIndex<RayParallelToPlane>(idx, e.what());
    } catch (const PointBehindCamera& e) {
      throw AtIndex<PointBehindCamera>(idx, e.what());
    }
  }
  return Trajectory(std::move(out), Frame::task_plane_m, traj.timestamps());
}

/// Yaw that puts the gripper fingers normal to the start->goal direction,
/// wrapped to (-pi, pi].
inline double gripper_yaw(const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                          double offset = std::numbers::pi / 2, double eps = 1e-9) {
  const Eigen::Vector2d d = goal - start;
  if (d.norm() <= eps) throw DegenerateDirection("start and goal coincide");
  double yaw = std::atan2(d.y(), d.x()) + offset;
  yaw = std::remainder(yaw, 2.0 * std::numbers::pi);
  if (yaw <= -std::numbers::pi) yaw += 2.0 * std::numbers::pi;
  return yaw;
}

inline nlohmann::json to_json(const CameraRig& rig) {
  const auto& R = rig.pose.rotation;
  nlohmann::json j;
  j["intrinsics"] = {{"cx", rig.intrinsics.cx}, {"cy", rig.intrinsics.cy},
                     {"fx", rig.intrinsics.fx}, {"fy", rig.intrinsics.fy}};
  j["pose"]["p"] = {rig.pose.position.x(), rig.pose.position.y(), rig.pose.position.z()};
  j["pose"]["R"] = {R(0, 0), R(0, 1), R(0, 2), R(1, 0), R(1, 1), R(1, 2), R(2, 0), R(2, 1), R(2, 2)};
  j["plane"]["n"] = {rig.plane.normal.x(), rig.plane.normal.y(), rig.plane.normal.z()};
  j["plane"]["p"] = {rig.plane.point.x(), rig.plane.point.y(), rig.plane.point.z()};
  return j;
}

inline CameraRig rig_from_json(const nlohmann::json& j) {
  auto vec3 = [](const nlohmann::json& a, const char* what) {
    if (!a.is_array() || a.size() != 3) throw FormatError(std::string(what) + " must have 3 entries");
    return Eigen::Vector3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  try {
    CameraRig rig;
    const auto& in = j.at("intrinsics");
    rig.intrinsics = {in.at("cx").get<double>(), in.at("cy").get<double>(), in.at("fx").get<double>(),
                      in.at("fy").get<double>()};
    rig.pose.position = vec3(j.at("pose").at("p"), "pose.p");
    const auto& r = j.at("pose").at("R");
    if (!r.is_array() || r.size() != 9) throw FormatError("pose.R must have 9 row-major entries");
    for (int i = 0; i < 9; ++i) rig.pose.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)].get<double>();
    rig.plane.normal = vec3(j.at("plane").at("n"), "plane.n");
    rig.plane.point = vec3(j.at("plane").at("p"), "plane.p");
    rig.validate();
    return rig;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rig record: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("rig record: ") + e.what());
  }
}

}  // namespace vinedmp
