#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "pandakit/dynamics.hpp"
#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/model.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

enum class SimMode : std::uint8_t { idle, torque_control, reflex_error };

namespace reflex {
inline constexpr std::uint32_t joint_position_limit = 1u << 0;
inline constexpr std::uint32_t joint_velocity_limit = 1u << 1;
inline constexpr std::uint32_t torque_limit = 1u << 2;
inline constexpr std::uint32_t communication = 1u << 3;

inline std::string describe(std::uint32_t flags) {
  std::string s;
  auto add = [&](std::uint32_t bit, const char* name) {
    if (!(flags & bit)) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(joint_position_limit, "joint_position_limit");
  add(joint_velocity_limit, "joint_velocity_limit");
  add(torque_limit, "torque_limit");
  add(communication, "communication");
  return s.empty() ? "none" : s;
}
}  // namespace reflex

inline constexpr double kSimDt = 1e-3;
inline constexpr std::uint64_t kSimDtUs = 1000;
inline constexpr double kReflexVelocityFactor = 1.1;
inline constexpr double kBrakeFactor = 0.98;

struct SimState {
  JointVector q = JointVector::Zero();
  JointVector dq = JointVector::Zero();
  JointVector tau_cmd = JointVector::Zero();
  std::uint64_t sim_time_us = 0;
  SimMode mode = SimMode::idle;
  std::uint32_t error_flags = 0;

  double sim_time() const { return static_cast<double>(sim_time_us) * 1e-6; }
};

// One 1 ms step. Torque control integrates M ddq = tau_cmd - c with gravity compensated by
// the simulated controller (semi-implicit Euler). Idle holds position; reflex_error brakes.
inline SimState sim_step(SimState s, const JointVector& tau_cmd, const RobotModel& model) {
  switch (s.mode) {
    case SimMode::idle:
      s.dq.setZero();
      s.tau_cmd.setZero();
      break;
    case SimMode::torque_control: {
      s.tau_cmd = tau_cmd;
      const JointMatrix m = mass_matrix(s.q, model);
      const JointVector ddq = m.ldlt().solve(tau_cmd - coriolis_vector(s.q, s.dq, model));
      s.dq += ddq * kSimDt;
      s.q += s.dq * kSimDt;
      break;
    }
    case SimMode::reflex_error:
      s.tau_cmd.setZero();
      s.dq *= kBrakeFactor;
      s.q += s.dq * kSimDt;
      break;
  }
  s.sim_time_us += kSimDtUs;
  return s;
}

inline std::uint32_t reflex_flags(const SimState& s, const MotionLimits& limits) {
  std::uint32_t flags = 0;
  if (!limits.within(s.q) || !s.q.allFinite()) flags |= reflex::joint_position_limit;
  if ((s.dq.cwiseAbs().array() > kReflexVelocityFactor * limits.dq_max.array()).any() || !s.dq.allFinite())
    flags |= reflex::joint_velocity_limit;
  if ((s.tau_cmd.cwiseAbs().array() > limits.tau_max.array()).any() || !s.tau_cmd.allFinite())
    flags |= reflex::torque_limit;
  return flags;
}

// Transitions to reflex_error when any rule fires; returns the new flags, if any.
inline std::optional<std::uint32_t> check_reflex(SimState& s, const MotionLimits& limits) {
  if (s.mode == SimMode::reflex_error) return std::nullopt;
  const std::uint32_t flags = reflex_flags(s, limits);
  if (flags == 0) return std::nullopt;
  s.error_flags |= flags;
  s.mode = SimMode::reflex_error;
  return flags;
}

inline void trip_reflex(SimState& s, std::uint32_t flags) {
  s.error_flags |= flags;
  s.mode = SimMode::reflex_error;
}

inline constexpr double kRecoverVelocityTolerance = 1e-3;

inline SimState recover(SimState s, const MotionLimits& limits) {
  if (s.mode != SimMode::reflex_error) throw NotInError("recover: robot is not in reflex error");
  if (s.dq.cwiseAbs().maxCoeff() > kRecoverVelocityTolerance)
    throw StillMoving("recover: joints are still moving");
  s.q = s.q.cwiseMax(limits.q_min).cwiseMin(limits.q_max);
  s.dq.setZero();
  s.tau_cmd.setZero();
  s.error_flags = 0;
  s.mode = SimMode::idle;
  return s;
}

// Measured joint torque: commanded torque plus the internally compensated gravity load.
inline JointVector measured_torque(const SimState& s, const RobotModel& model) {
  return s.tau_cmd + gravity_vector(s.q, model);
}

inline double kinetic_energy(const SimState& s, const RobotModel& model) {
  return 0.5 * s.dq.dot(mass_matrix(s.q, model) * s.dq);
}

}  // namespace pandakit
