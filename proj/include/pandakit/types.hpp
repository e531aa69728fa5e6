#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace pandakit {

inline constexpr int kDof = 7;

using JointVector = Eigen::Matrix<double, kDof, 1>;
using JointMatrix = Eigen::Matrix<double, kDof, kDof>;
using Jacobian = Eigen::Matrix<double, 6, kDof>;
using Twist = Eigen::Matrix<double, 6, 1>;
using Pose = Eigen::Matrix4d;
using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
// Unit quaternion stored scalar-last: (x, y, z, w).
using QuatXYZW = Eigen::Vector4d;

inline bool all_finite(const JointVector& v) { return v.allFinite(); }

inline Matrix3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Matrix3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Matrix3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Matrix3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Matrix3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Matrix3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline Pose make_pose(const Matrix3& r, const Vector3& p) {
  Pose t = Pose::Identity();
  t.topLeftCorner<3, 3>() = r;
  t.topRightCorner<3, 1>() = p;
  return t;
}

inline Pose translation(double x, double y, double z) {
  return make_pose(Matrix3::Identity(), Vector3(x, y, z));
}

inline Matrix3 rotation_of(const Pose& t) { return t.topLeftCorner<3, 3>(); }
inline Vector3 position_of(const Pose& t) { return t.topRightCorner<3, 1>(); }

inline Pose pose_inverse(const Pose& t) {
  const Matrix3 rt = rotation_of(t).transpose();
  return make_pose(rt, -rt * position_of(t));
}

// Rotation vector (axis * angle) of a rotation matrix, angle in [0, pi].
inline Vector3 rotation_log(const Matrix3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

// Pose invariants: bottom row [0 0 0 1], orthonormal rotation with det 1.
inline bool is_valid_pose(const Pose& t, double tol = 1e-9) {
  if (!t.allFinite()) return false;
  if (t(3, 0) != 0.0 || t(3, 1) != 0.0 || t(3, 2) != 0.0 || t(3, 3) != 1.0) return false;
  const Matrix3 r = rotation_of(t);
  if ((r.transpose() * r - Matrix3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

struct PoseError {
  double position = 0.0;     // m
  double orientation = 0.0;  // rad
};

inline PoseError pose_error(const Pose& a, const Pose& b) {
  return {(position_of(a) - position_of(b)).norm(),
          Eigen::AngleAxisd(rotation_of(a).transpose() * rotation_of(b)).angle()};
}

inline QuatXYZW to_xyzw(const Eigen::Quaterniond& q) {
  return {q.x(), q.y(), q.z(), q.w()};
}

inline Eigen::Quaterniond from_xyzw(const QuatXYZW& v) {
  return Eigen::Quaterniond(v[3], v[0], v[1], v[2]);
}

inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

}  // namespace pandakit
