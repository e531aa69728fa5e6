#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pandakit/errors.hpp"
#include "pandakit/model.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

inline Pose dh_transform(const DhRow& row, double q) {
  const double ct = std::cos(row.theta_offset + q), st = std::sin(row.theta_offset + q);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Pose t;
  t << ct, -st, 0.0, row.a,
       st * ca, ct * ca, -sa, -sa * row.d,
       st * sa, ct * sa, ca, ca * row.d,
       0.0, 0.0, 0.0, 1.0;
  return t;
}

// Base-to-frame transforms: frames[i] is the frame of joint i (0-based), frames[7] the flange.
using FrameChain = std::array<Pose, kDof + 1>;

inline FrameChain frame_chain(const JointVector& q, const RobotDescription& desc) {
  FrameChain frames;
  Pose t = Pose::Identity();
  for (int i = 0; i < kDof; ++i) {
    t = t * dh_transform(desc.dh[i], q[i]);
    frames[i] = t;
  }
  frames[kDof] = t * dh_transform(desc.dh[kDof], 0.0);
  return frames;
}

inline Pose fk(const JointVector& q, const RobotDescription& desc) {
  Pose t = frame_chain(q, desc)[kDof] * desc.flange_to_ee;
  t.row(3) << 0.0, 0.0, 0.0, 1.0;
  return t;
}

// Geometric Jacobian expressed in the base frame, rows (v, w).
inline Jacobian jacobian_base(const JointVector& q, const RobotDescription& desc) {
  const FrameChain frames = frame_chain(q, desc);
  const Vector3 p_ee = position_of(frames[kDof] * desc.flange_to_ee);
  Jacobian j;
  for (int i = 0; i < kDof; ++i) {
    const Vector3 z = frames[i].block<3, 1>(0, 2);
    const Vector3 o = position_of(frames[i]);
    j.block<3, 1>(0, i) = z.cross(p_ee - o);
    j.block<3, 1>(3, i) = z;
  }
  return j;
}

// Geometric Jacobian expressed in the end-effector frame; J * dq is the body twist.
inline Jacobian jacobian(const JointVector& q, const RobotDescription& desc) {
  const Matrix3 rt = rotation_of(fk(q, desc)).transpose();
  Jacobian j = jacobian_base(q, desc);
  j.topRows<3>() = rt * j.topRows<3>();
  j.bottomRows<3>() = rt * j.bottomRows<3>();
  return j;
}

inline double manipulability(const JointVector& q, const RobotDescription& desc) {
  const Jacobian j = jacobian_base(q, desc);
  const double det = (j * j.transpose()).determinant();
  return det > 0.0 ? std::sqrt(det) : 0.0;
}

// Central finite difference of the manipulability index, step 1e-6.
inline JointVector manipulability_gradient(const JointVector& q, const RobotDescription& desc) {
  if (manipulability(q, desc) <= 1e-9) throw NearSingular("manipulability gradient near singularity");
  constexpr double h = 1e-6;
  JointVector g;
  for (int i = 0; i < kDof; ++i) {
    JointVector qp = q, qm = q;
    qp[i] += h;
    qm[i] -= h;
    g[i] = (manipulability(qp, desc) - manipulability(qm, desc)) / (2.0 * h);
  }
  return g;
}

namespace detail {

// Shift `angle` by multiples of 2*pi into [lo, hi], preferring the value closest to `ref`.
inline std::optional<double> fit_angle(double angle, double lo, double hi, double ref) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  constexpr double slack = 1e-12;
  std::optional<double> best;
  const double base = angle + two_pi * std::round((ref - angle) / two_pi);
  for (int k = -2; k <= 2; ++k) {
    const double a = base + k * two_pi;
    if (a < lo - slack || a > hi + slack) continue;
    const double c = std::clamp(a, lo, hi);
    if (!best || std::abs(c - ref) < std::abs(*best - ref)) best = c;
  }
  return best;
}

inline Twist pose_residual(const Pose& target, const Pose& current) {
  Twist e;
  e.head<3>() = position_of(target) - position_of(current);
  e.tail<3>() = rotation_log(rotation_of(target) * rotation_of(current).transpose());
  return e;
}

struct IkCandidate {
  JointVector q;
  double elbow_height = 0.0;
};

}  // namespace detail

// Closed-form inverse kinematics for the Panda geometry, with joint 7 fixed to `q7`.
// Enumerates up to eight branches (elbow, wrist and shoulder flips), keeps those within the
// joint limits and returns the one closest to `q_init`. Each returned solution is polished by
// a few damped Newton steps on joints 1-6 so the pose residual sits at round-off level.
inline JointVector ik(const Pose& pose, double q7, const JointVector& q_init,
                      const RobotDescription& desc) {
  const MotionLimits& lim = desc.limits;
  if (!is_valid_pose(pose, 1e-6)) throw std::invalid_argument("ik: pose is not a rigid transform");
  if (!(q7 >= lim.q_min[6] && q7 <= lim.q_max[6]))
    throw std::invalid_argument("ik: q7 outside joint 7 limits");

  const auto& dh = desc.dh;
  const Pose t_flange = pose * pose_inverse(desc.flange_to_ee);
  const Pose t7 = t_flange * pose_inverse(dh_transform(dh[7], 0.0));
  const Pose t6 = t7 * pose_inverse(dh_transform(dh[6], q7));
  const Vector3 wrist = position_of(t6);
  const Matrix3 r6 = rotation_of(t6);
  const Vector3 shoulder(0.0, 0.0, dh[0].d);

  const double d3 = dh[2].d, a4 = dh[3].a, a5 = dh[4].a, d5 = dh[4].d;
  const Vector3 sw = shoulder - wrist;
  // |shoulder - wrist|^2 = k + p cos(q4) + s sin(q4)
  const double k = a4 * a4 + a5 * a5 + d5 * d5 + d3 * d3;
  const double p = 2.0 * (a4 * a5 + d3 * d5);
  const double s = 2.0 * (d3 * a5 - a4 * d5);
  const double amp = std::hypot(p, s);
  const double c4 = (sw.squaredNorm() - k) / amp;
  if (std::abs(c4) > 1.0 + 1e-12) throw Unreachable("ik: wrist centre out of reach");
  const double psi = std::atan2(s, p);
  const double delta4 = std::acos(std::clamp(c4, -1.0, 1.0));

  const Vector3 v6 = r6.transpose() * sw;
  const double r6xy = std::hypot(v6.x(), v6.y());
  const double phi6 = std::atan2(v6.x(), v6.y());

  std::vector<detail::IkCandidate> candidates;
  candidates.reserve(8);
  for (const double q4_raw : {psi + delta4, psi - delta4}) {
    const auto q4 = detail::fit_angle(q4_raw, lim.q_min[3], lim.q_max[3], q_init[3]);
    if (!q4) continue;
    const double c = std::cos(*q4), sn = std::sin(*q4);
    const Vector3 sw3(-(a4 + a5 * c - d5 * sn), 0.0, -(d3 + a5 * sn + d5 * c));
    const Matrix3 r34 = rot_x(dh[3].alpha) * rot_z(*q4);
    const Vector3 v4 = r34.transpose() * sw3;

    if (r6xy < 1e-12) continue;
    const double c6 = v4.y() / r6xy;
    if (std::abs(c6) > 1.0 + 1e-9) continue;
    const double delta6 = std::acos(std::clamp(c6, -1.0, 1.0));
    for (const double q6_raw : {phi6 + delta6, phi6 - delta6}) {
      const auto q6 = detail::fit_angle(q6_raw, lim.q_min[5], lim.q_max[5], q_init[5]);
      if (!q6) continue;
      const Vector3 u = rot_z(*q6) * v6;
      const double q5_raw = std::atan2(v4.x(), v4.z()) - std::atan2(u.x(), u.z());
      const auto q5 = detail::fit_angle(q5_raw, lim.q_min[4], lim.q_max[4], q_init[4]);
      if (!q5) continue;

      const Matrix3 r5 = r6 * (rot_x(dh[5].alpha) * rot_z(*q6)).transpose();
      const Matrix3 r4 = r5 * (rot_x(dh[4].alpha) * rot_z(*q5)).transpose();
      const Matrix3 r3 = r4 * r34.transpose();
      const Vector3 elbow = wrist - r4 * Vector3(a5, d5, 0.0);

      // r3 = RotZ(q1) RotY(q2) RotZ(q3)
      const double c2 = std::clamp(r3(2, 2), -1.0, 1.0);
      const double s2_abs = std::sqrt(std::max(0.0, 1.0 - c2 * c2));
      for (const double sign : {1.0, -1.0}) {
        double q1_raw, q2_raw, q3_raw;
        if (s2_abs < 1e-9) {
          if (sign < 0) break;
          q2_raw = std::atan2(0.0, c2);
          q1_raw = q_init[0];
          q3_raw = std::atan2(r3(1, 0), r3(0, 0)) - q1_raw;
        } else {
          q2_raw = std::atan2(sign * s2_abs, c2);
          q1_raw = std::atan2(sign * r3(1, 2), sign * r3(0, 2));
          q3_raw = std::atan2(sign * r3(2, 1), -sign * r3(2, 0));
        }
        const auto q1 = detail::fit_angle(q1_raw, lim.q_min[0], lim.q_max[0], q_init[0]);
        const auto q2 = detail::fit_angle(q2_raw, lim.q_min[1], lim.q_max[1], q_init[1]);
        const auto q3 = detail::fit_angle(q3_raw, lim.q_min[2], lim.q_max[2], q_init[2]);
        if (!q1 || !q2 || !q3) continue;
        detail::IkCandidate cand;
        cand.q << *q1, *q2, *q3, *q4, *q5, *q6, q7;
        cand.elbow_height = elbow.z();
        candidates.push_back(cand);
      }
    }
  }

  std::sort(candidates.begin(), candidates.end(), [&](const auto& a, const auto& b) {
    const double da = (a.q - q_init).norm(), db = (b.q - q_init).norm();
    if (std::abs(da - db) > 1e-12) return da < db;
    return a.elbow_height > b.elbow_height;
  });

  for (auto& cand : candidates) {
    JointVector q = cand.q;
    double prev = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 50; ++iter) {
      const Twist e = detail::pose_residual(pose, fk(q, desc));
      const double norm = e.norm();
      if (norm < 1e-12 || norm >= prev) break;
      prev = norm;
      const Eigen::Matrix<double, 6, 6> j6 = jacobian_base(q, desc).leftCols<6>();
      const Eigen::Matrix<double, 6, 6> a =
          j6.transpose() * j6 + 1e-6 * Eigen::Matrix<double, 6, 6>::Identity();
      q.head<6>() += a.ldlt().solve(j6.transpose() * e);
    }
    const PoseError err = pose_error(fk(q, desc), pose);
    if (err.position > 1e-8 || err.orientation > 1e-8) continue;
    if (!lim.within(q)) continue;
    return q;
  }
  throw Unreachable("ik: no solution branch within joint limits");
}

inline JointVector ik(const Pose& pose, const RobotDescription& desc) {
  return ik(pose, desc.neutral_q[6], desc.neutral_q, desc);
}

}  // namespace pandakit
