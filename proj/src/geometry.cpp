#include "cslam/geometry.hpp"

#include <cmath>

namespace cslam {

Pose::Pose(const Eigen::Quaterniond& q_in, const Eigen::Vector3d& p_in) : q(q_in), p(p_in) {
  normalize();
}

Pose Pose::from_matrix(const Eigen::Matrix4d& T) {
  Pose out;
  out.q = Eigen::Quaterniond(Eigen::Matrix3d(T.topLeftCorner<3, 3>()));
  out.p = T.topRightCorner<3, 1>();
  out.normalize();
  return out;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = rotation();
  T.topRightCorner<3, 1>() = p;
  return T;
}

void Pose::normalize() {
  q.normalize();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  } else if (q.w() == 0.0) {
    // 180-degree rotations: pick the representative whose first nonzero
    // vector component is positive, so canonicalization stays single-valued.
    const double* v = q.vec().data();
    for (int i = 0; i < 3; ++i) {
      if (v[i] != 0.0) {
        if (v[i] < 0.0) q.coeffs() = -q.coeffs();
        break;
      }
    }
  }
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.q = a.q * b.q;
  out.p = a.q * b.p + a.p;
  out.normalize();
  return out;
}

Pose inverse(const Pose& a) {
  Pose out;
  out.q = a.q.conjugate();
  out.p = -(out.q * a.p);
  out.normalize();
  return out;
}

Eigen::Vector3d quat_vec(const Eigen::Quaterniond& q) {
  return q.vec();
}

double rotation_angle(const Eigen::Quaterniond& q) {
  const double w = std::min(1.0, std::abs(q.w()));
  return 2.0 * std::acos(w);
}

double rotation_distance(const Pose& a, const Pose& b) {
  return rotation_angle(a.q.conjugate() * b.q);
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return S;
}

Eigen::Quaterniond exp_so3(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * angle;
  const Eigen::Vector3d axis = theta / angle;
  const double s = std::sin(half);
  return {std::cos(half), s * axis.x(), s * axis.y(), s * axis.z()};
}

Eigen::Vector3d log_so3(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double vn = q.vec().norm();
  if (vn < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(vn, q.w());
  return (angle / vn) * q.vec();
}

BearingRay pixel_to_ray(double u, double v, const CameraIntrinsics& cam) {
  Eigen::Vector3d d((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return d.normalized();
}

Eigen::Vector2d ray_to_pixel(const BearingRay& d, const CameraIntrinsics& cam) {
  return {cam.fx * d.x() / d.z() + cam.cx, cam.fy * d.y() / d.z() + cam.cy};
}

PluckerLine plucker_from_camera(const BearingRay& ray, const Pose& cam_in_rig) {
  PluckerLine line;
  line.d = cam_in_rig.q * ray;
  line.m = cam_in_rig.p.cross(line.d);
  return line;
}

}  // namespace cslam
