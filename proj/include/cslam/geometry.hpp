#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>

namespace cslam {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

// Unit bearing vector in the camera frame (z forward for pinhole keypoints).
using BearingRay = Eigen::Vector3d;

// Rigid-body transform (q, p): maps points from the child frame into the
// parent frame, x_parent = R(q) * x_child + p. Quaternions are scalar-first
// (w,x,y,z), unit norm, canonicalized to w >= 0.
struct Pose {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d p{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Eigen::Quaterniond& q_in, const Eigen::Vector3d& p_in);

  static Pose identity() { return {}; }
  static Pose from_matrix(const Eigen::Matrix4d& T);

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return q * x + p; }

  // Renormalizes q and flips its sign so that w >= 0 (ties broken on the
  // first nonzero vector component).
  void normalize();
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

// Vector part (x,y,z) of a canonicalized unit quaternion.
Eigen::Vector3d quat_vec(const Eigen::Quaterniond& q);

// Rotation angle in radians, in [0, pi].
double rotation_angle(const Eigen::Quaterniond& q);

// Angle of the relative rotation between two poses, radians.
double rotation_distance(const Pose& a, const Pose& b);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// so(3) exponential: rotation of |theta| radians about theta/|theta|.
Eigen::Quaterniond exp_so3(const Eigen::Vector3d& theta);

// Inverse of exp_so3 for the canonical (w >= 0) representative.
Eigen::Vector3d log_so3(const Eigen::Quaterniond& q);

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
};

// Back-projects an undistorted pixel to a unit bearing ray (fx, fy > 0).
BearingRay pixel_to_ray(double u, double v, const CameraIntrinsics& cam);

// Projects a ray (or camera-frame point) with positive depth to pixels.
// The caller guarantees d.z > 0.
Eigen::Vector2d ray_to_pixel(const BearingRay& d, const CameraIntrinsics& cam);

// 6-parameter line through a camera center, expressed in the rig frame.
// m = c x d where c is the camera center in rig coordinates, so d.m = 0.
struct PluckerLine {
  Eigen::Vector3d d{0.0, 0.0, 1.0};
  Eigen::Vector3d m{0.0, 0.0, 0.0};
};

PluckerLine plucker_from_camera(const BearingRay& ray, const Pose& cam_in_rig);

}  // namespace cslam
