#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "pandakit/client.hpp"
#include "pandakit/controllers.hpp"
#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/qp.hpp"

// Manipulability-maximising resolved-rate servoing through a QP with slack.
namespace pandakit::mmc {

using Twist6 = Eigen::Matrix<double, 6, 1>;

inline constexpr double kDefaultThreshold = 0.1;
inline constexpr double kMinSpatialError = 1e-6;

// Roll, pitch, yaw of R = Rz(yaw) Ry(pitch) Rx(roll), radians.
inline Vector3 rpy_zyx(const Matrix3& r) {
  const double pitch = std::atan2(-r(2, 0), std::hypot(r(0, 0), r(1, 0)));
  if (std::abs(std::abs(pitch) - std::numbers::pi / 2) < 1e-12) {
    // Gimbal lock: fold everything into yaw.
    const double yaw = pitch > 0 ? std::atan2(r(1, 2), r(0, 2)) : std::atan2(-r(1, 2), -r(0, 2));
    return {0.0, pitch, yaw};
  }
  return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

// Sum of |translation| and |rpy| * pi / 180 of Te^-1 * Tep (mixed units, kept as is).
inline double spatial_error(const Pose& te, const Pose& tep) {
  const Pose e = pose_inverse(te) * tep;
  return position_of(e).cwiseAbs().sum() + rpy_zyx(rotation_of(e)).cwiseAbs().sum() * std::numbers::pi / 180.0;
}

struct ServoOutput {
  Twist6 v = Twist6::Zero();
  bool arrived = false;
};

// Proportional servo towards Tep in the end-effector frame: v = gain * [t; axis * angle] of Te^-1 Tep.
inline ServoOutput p_servo(const Pose& te, const Pose& tep, double gain, double threshold = kDefaultThreshold) {
  if (!(gain > 0.0) || !(threshold > 0.0)) throw std::invalid_argument("p_servo: gain and threshold must be positive");
  const Pose e = pose_inverse(te) * tep;
  ServoOutput out;
  out.v.head<3>() = gain * position_of(e);
  out.v.tail<3>() = gain * rotation_log(rotation_of(e));
  out.arrived = spatial_error(te, tep) < threshold;
  return out;
}

struct MmcParams {
  double Y = 0.01;
  double slack_bound = 10.0;
  bool maximise_manipulability = true;  // false gives the plain resolved-rate baseline (c = 0)
};

// Decision vector x = [dq (7); slack (6)].
inline QPProblem build_mmc_qp(const JointVector& q, const Pose& te, const Pose& tep, const RobotDescription& kin,
                              const Twist6& v, const MmcParams& params = {}) {
  if (manipulability(q, kin) <= 1e-9) throw NearSingular("mmc: configuration is near singular");
  constexpr int n = kDof, ns = 6, nx = n + ns;
  const double e = std::max(spatial_error(te, tep), kMinSpatialError);
  QPProblem p;
  p.Q = MatrixX::Identity(nx, nx);
  p.Q.topLeftCorner(n, n) *= params.Y;
  p.Q.bottomRightCorner(ns, ns) *= 1.0 / e;
  p.c = VectorX::Zero(nx);
  if (params.maximise_manipulability) p.c.head(n) = -manipulability_gradient(q, kin);
  p.A_eq = MatrixX::Zero(ns, nx);
  p.A_eq.leftCols(n) = jacobian(q, kin);
  p.A_eq.rightCols(ns).setIdentity();
  p.b_eq = v;
  p.lb.resize(nx);
  p.ub.resize(nx);
  p.ub.head(n) = kin.limits.dq_max;
  p.ub.tail(ns).setConstant(params.slack_bound);
  p.lb = -p.ub;
  return p;
}

struct ServoGoal {
  Pose Tep = Pose::Identity();
  double gain = 1.0;
  double threshold = kDefaultThreshold;
};

struct ServoIteration {
  double time = 0.0;
  double error = 0.0;
  double manipulability = 0.0;
  JointVector dq = JointVector::Zero();
};

struct ServoReport {
  bool arrived = false;
  int iterations = 0;
  double final_error = 0.0;
  double final_manipulability = 0.0;
  std::vector<ServoIteration> log;
};

struct RunOptions {
  MmcParams params;
  double max_runtime = 60.0;
};

// Drives an IntegratedVelocity controller with the QP's joint velocities until the goal is reached.
inline ServoReport run_mmc(Panda& panda, const ServoGoal& goal, double loop_hz, const RunOptions& opts = {}) {
  const RobotDescription& kin = panda.model().kin;
  auto ctrl = std::make_shared<IntegratedVelocityController>(panda.model());
  panda.start_controller(ctrl);
  ServoReport report;
  auto ctx = panda.create_context(loop_hz, opts.max_runtime);
  try {
    while (ctx.ok()) {
      const RobotState state = panda.get_state();
      const Pose te = fk(state.q, kin);
      const ServoOutput servo = p_servo(te, goal.Tep, goal.gain, goal.threshold);
      ServoIteration it;
      it.time = state.time;
      it.error = spatial_error(te, goal.Tep);
      it.manipulability = manipulability(state.q, kin);
      ++report.iterations;
      report.final_error = it.error;
      report.final_manipulability = it.manipulability;
      if (servo.arrived) {
        report.arrived = true;
        report.log.push_back(it);
        break;
      }
      const QPSolution sol = solve_qp(build_mmc_qp(state.q, te, goal.Tep, kin, servo.v, opts.params));
      if (sol.status != QPStatus::optimal) throw NoConvergence("mmc: velocity QP was not solved");
      it.dq = sol.x.head<kDof>();
      report.log.push_back(it);
      ctrl->set_control(it.dq);
    }
  } catch (...) {
    if (panda.controller_running()) {
      try {
        panda.stop_controller();
      } catch (const std::exception&) {
      }
    }
    throw;
  }
  ctrl->set_control(JointVector::Zero());
  panda.stop_controller();
  if (!report.arrived) throw NoConvergence("mmc: goal not reached within max_runtime");
  return report;
}

}  // namespace pandakit::mmc
