#pragma once

#include "pandakit/kinematics.hpp"
#include "pandakit/model.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

// Recursive Newton-Euler inverse dynamics on the modified-DH chain.
// Returns tau = M(q) ddq + c(q, dq) + g(q), including the armature term.
inline JointVector rnea(const JointVector& q, const JointVector& dq, const JointVector& ddq,
                        const RobotDescription& kin, const DynamicsParams& params) {
  std::array<Matrix3, kDof + 1> rot;  // rot[i]: orientation of frame i in frame i-1
  std::array<Vector3, kDof + 1> off;  // off[i]: origin of frame i in frame i-1
  for (int i = 0; i <= kDof; ++i) {
    const Pose t = dh_transform(kin.dh[i], i < kDof ? q[i] : 0.0);
    rot[i] = rotation_of(t);
    off[i] = position_of(t);
  }

  const Vector3 z(0.0, 0.0, 1.0);
  Vector3 w = Vector3::Zero(), dw = Vector3::Zero();
  Vector3 dv = -params.gravity;
  std::array<Vector3, kDof> force, moment;
  for (int i = 0; i < kDof; ++i) {
    const Matrix3 rt = rot[i].transpose();
    const Vector3 dv_i = rt * (dw.cross(off[i]) + w.cross(w.cross(off[i])) + dv);
    const Vector3 w_prev = rt * w;
    const Vector3 w_i = w_prev + dq[i] * z;
    const Vector3 dw_i = rt * dw + w_prev.cross(dq[i] * z) + ddq[i] * z;

    const LinkInertia& link = params.links[i];
    const Vector3 dv_c = dw_i.cross(link.com) + w_i.cross(w_i.cross(link.com)) + dv_i;
    force[i] = link.mass * dv_c;
    moment[i] = link.inertia * dw_i + w_i.cross(link.inertia * w_i);
    w = w_i;
    dw = dw_i;
    dv = dv_i;
  }

  JointVector tau;
  Vector3 f = Vector3::Zero(), n = Vector3::Zero();
  for (int i = kDof - 1; i >= 0; --i) {
    // Wrench transmitted from link i+1 (the flange carries no load).
    const Vector3 f_child = rot[i + 1] * f;
    const Vector3 n_child = rot[i + 1] * n;
    const Vector3 f_i = f_child + force[i];
    const Vector3 n_i =
        moment[i] + n_child + params.links[i].com.cross(force[i]) + off[i + 1].cross(f_child);
    tau[i] = n_i.dot(z) + params.armature[i] * ddq[i];
    f = f_i;
    n = n_i;
  }
  return tau;
}

inline JointVector gravity_vector(const JointVector& q, const RobotDescription& kin,
                                  const DynamicsParams& params) {
  return rnea(q, JointVector::Zero(), JointVector::Zero(), kin, params);
}

inline JointVector coriolis_vector(const JointVector& q, const JointVector& dq,
                                   const RobotDescription& kin, const DynamicsParams& params) {
  return rnea(q, dq, JointVector::Zero(), kin, params) - gravity_vector(q, kin, params);
}

// Column i is the zero-gravity, zero-velocity RNEA torque for a unit acceleration of joint i.
inline JointMatrix mass_matrix(const JointVector& q, const RobotDescription& kin,
                               const DynamicsParams& params) {
  DynamicsParams no_gravity = params;
  no_gravity.gravity.setZero();
  JointMatrix m;
  for (int i = 0; i < kDof; ++i) {
    m.col(i) = rnea(q, JointVector::Zero(), JointVector::Unit(i), kin, no_gravity);
  }
  return m;
}

inline JointVector rnea(const JointVector& q, const JointVector& dq, const JointVector& ddq,
                        const RobotModel& model) {
  return rnea(q, dq, ddq, model.kin, model.dyn);
}
inline JointVector gravity_vector(const JointVector& q, const RobotModel& model) {
  return gravity_vector(q, model.kin, model.dyn);
}
inline JointVector coriolis_vector(const JointVector& q, const JointVector& dq,
                                   const RobotModel& model) {
  return coriolis_vector(q, dq, model.kin, model.dyn);
}
inline JointMatrix mass_matrix(const JointVector& q, const RobotModel& model) {
  return mass_matrix(q, model.kin, model.dyn);
}

}  // namespace pandakit
