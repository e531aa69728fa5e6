// Tests for pandakit/controllers.hpp, closed-loop cases against the sim core.

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "pandakit/controllers.hpp"
#include "pandakit/sim.hpp"
#include "pandakit/trajectory.hpp"
#include "test_util.hpp"

namespace pandakit {
namespace {

const RobotModel& model() {
  static const RobotModel m = panda_model();
  return m;
}

SimState torque_state(const JointVector& q) {
  SimState s;
  s.q = q;
  s.mode = SimMode::torque_control;
  return s;
}

// Step the plant under `ctrl` for `steps` periods; `each(k, state, cmd)` runs before each step.
template <typename F>
void run_loop(SimState& s, TorqueController& ctrl, int steps, F&& each) {
  ctrl.start(s.q, s.dq, JointVector::Zero());
  for (int k = 0; k < steps; ++k) {
    each(k, s);
    const TorqueCommand cmd = ctrl.step(s.q, s.dq, kSimDt);
    s = sim_step(s, cmd.tau, model());
  }
}

TEST(JointImpedance, EquilibriumIsZero) {
  const JointVector q = model().kin.neutral_q;
  const JointVector tau = joint_impedance_torque(q, JointVector::Zero(), q, JointVector::Zero(),
                                                default_gains(), model());
  EXPECT_LE(tau.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(JointImpedance, SpringLaw) {
  const JointVector q = model().kin.neutral_q;
  JointVector q_d = q;
  q_d[2] += 0.01;
  JointVector tau =
      joint_impedance_torque(q, JointVector::Zero(), q_d, JointVector::Zero(), default_gains(), model());
  EXPECT_NEAR(tau[2], 6.0, 1e-12);
  tau[2] = 0;
  EXPECT_LE(tau.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(JointImpedance, TracksCartesianPlan) {
  const RobotDescription& desc = model().kin;
  Pose t0 = fk(desc.neutral_q, desc);
  t0(1, 3) = 0.25;
  Pose t1 = t0;
  t1(1, 3) -= 0.5;
  const JointVector q_start = ik(t0, desc.neutral_q[6], desc.neutral_q, desc);
  const auto traj = plan_cartesian_waypoints({t0, t1}, desc.limits);
  CartesianJointSampler sampler(traj, desc, q_start);
  JointPositionController ctrl(model());
  SimState s = torque_state(q_start);
  const int steps = static_cast<int>(std::ceil(traj.total_duration() / kSimDt));
  double sq = 0;
  JointVector q_d = q_start;
  run_loop(s, ctrl, steps, [&](int k, const SimState& st) {
    sq += (st.q - q_d).squaredNorm();
    const JointSample ref = sampler(std::min(k * kSimDt, traj.total_duration()));
    q_d = ref.q;
    ctrl.set_control(ref.q, ref.dq);
  });
  const double rms = std::sqrt(sq / (steps * kDof));
  EXPECT_LT(rms, 5e-3);
  EXPECT_EQ(s.mode, SimMode::torque_control);
}

TEST(CartesianImpedance, ZeroAtSetpoint) {
  const JointVector q = model().kin.neutral_q;
  const Pose t = fk(q, model().kin);
  const CartesianSetpoint sp{position_of(t), Eigen::Quaterniond(rotation_of(t))};
  const JointVector tau = cartesian_impedance_torque(q, JointVector::Zero(), sp, default_gains(), model());
  EXPECT_LE(tau.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CartesianImpedance, PositionErrorMapsThroughJacobian) {
  const JointVector q = model().kin.neutral_q;
  const Pose t = fk(q, model().kin);
  CartesianSetpoint sp{position_of(t) + Vector3(0, 0.01, 0), Eigen::Quaterniond(rotation_of(t))};
  ImpedanceGains g = default_gains();
  g.cart_stiffness << 200, 200, 200, 20, 20, 20;
  const JointVector tau = cartesian_impedance_torque(q, JointVector::Zero(), sp, g, model());
  Twist f = Twist::Zero();
  f[1] = 2.0;
  const JointVector expected = jacobian_base(q, model().kin).transpose() * f;
  EXPECT_LE((tau - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CartesianImpedance, OrientationErrorShortestArc) {
  const Eigen::Quaterniond a(Eigen::AngleAxisd(0.3, Vector3::UnitZ()));
  const Eigen::Quaterniond b(Eigen::AngleAxisd(0.5, Vector3::UnitZ()));
  EXPECT_LE((orientation_error(a, b) - Vector3(0, 0, 0.2)).norm(), 1e-12);
  Eigen::Quaterniond neg = b;
  neg.coeffs() = -neg.coeffs();
  EXPECT_LE((orientation_error(a, neg) - Vector3(0, 0, 0.2)).norm(), 1e-12);
  EXPECT_THROW(ControllerCommand::cart_pose(Vector3::Zero(), QuatXYZW(0, 0, 0, 1.1)), InvalidCommand);
}

TEST(CartesianImpedance, HoldsStartPose) {
  CartesianImpedanceController ctrl(model());
  SimState s = torque_state(model().kin.neutral_q);
  const Vector3 p0 = position_of(fk(s.q, model().kin));
  double drift = 0;
  run_loop(s, ctrl, 5000, [&](int, const SimState& st) {
    drift = std::max(drift, (position_of(fk(st.q, model().kin)) - p0).norm());
  });
  EXPECT_LT(drift, 1e-3);
}

struct SinusoidResult {
  double amplitude, rms;
};

SinusoidResult run_sinusoid(const ImpedanceGains& gains) {
  CartesianImpedanceController ctrl(model(), gains);
  SimState s = torque_state(model().kin.neutral_q);
  const Pose t0 = fk(s.q, model().kin);
  const Vector3 x0 = position_of(t0);
  const QuatXYZW q0 = to_xyzw(Eigen::Quaterniond(rotation_of(t0)));
  const int steps = static_cast<int>(4.0 * std::numbers::pi / kSimDt);
  double ymin = 1e9, ymax = -1e9, sq = 0;
  Vector3 x_d = x0;
  run_loop(s, ctrl, steps, [&](int k, const SimState& st) {
    const Vector3 x = position_of(fk(st.q, model().kin));
    sq += (x - x_d).squaredNorm();
    ymin = std::min(ymin, x.y() - x0.y());
    ymax = std::max(ymax, x.y() - x0.y());
    x_d = x0;
    x_d.y() += 0.1 * std::sin(k * kSimDt);
    ctrl.set_control(x_d, q0);
  });
  return {0.5 * (ymax - ymin), std::sqrt(sq / steps)};
}

TEST(CartesianImpedance, SinusoidTracking) {
  const auto r = run_sinusoid(default_gains());
  EXPECT_NEAR(r.amplitude, 0.1, 0.01);
  EXPECT_LT(r.rms, 5e-3);
}

TEST(CartesianImpedance, FilterMovesSetpointGradually) {
  ImpedanceGains g = default_gains();
  g.filter_coeff = 0.1;
  CartesianImpedanceController ctrl(model(), g);
  const JointVector q = model().kin.neutral_q;
  ctrl.start(q, JointVector::Zero(), JointVector::Zero());
  const Vector3 p0 = ctrl.filtered_setpoint().position;
  ctrl.set_control(p0 + Vector3(0, 0.1, 0), QuatXYZW(1, 0, 0, 0));
  ctrl.step(q, JointVector::Zero(), kSimDt);
  EXPECT_NEAR(ctrl.filtered_setpoint().position.y() - p0.y(), 0.01, 1e-12);
  ctrl.step(q, JointVector::Zero(), kSimDt);
  EXPECT_NEAR(ctrl.filtered_setpoint().position.y() - p0.y(), 0.019, 1e-12);
}

TEST(IntegratedVelocity, Integration) {
  const MotionLimits lim = panda_limits();
  const JointVector q = model().kin.neutral_q;
  EXPECT_EQ(integrated_velocity_step(q, JointVector::Zero(), 1e-3, lim), q);
  JointVector dq = JointVector::Zero();
  dq[0] = 0.1;
  EXPECT_NEAR(integrated_velocity_step(q, dq, 1e-3, lim)[0], q[0] + 1e-4, 1e-15);
  EXPECT_THROW(integrated_velocity_step(q, dq, 0.0, lim), std::invalid_argument);
}

TEST(IntegratedVelocity, SaturatesInsideMargin) {
  const MotionLimits lim = panda_limits();
  JointVector q_d = model().kin.neutral_q;
  JointVector dq = JointVector::Zero();
  dq[3] = 5.0;  // above dq_max, clamped too
  for (int k = 0; k < 5000; ++k) {
    const JointVector next = integrated_velocity_step(q_d, dq, 1e-3, lim);
    ASSERT_LE(next[3] - q_d[3], lim.dq_max[3] * 1e-3 + 1e-15);
    q_d = next;
    ASSERT_LE(q_d[3], lim.q_max[3] - 0.1 + 1e-15);
  }
  EXPECT_DOUBLE_EQ(q_d[3], lim.q_max[3] - 0.1);
}

TEST(IntegratedVelocity, ClosedLoopStaysInLimits) {
  IntegratedVelocityController ctrl(model());
  SimState s = torque_state(model().kin.neutral_q);
  JointVector dq = JointVector::Zero();
  dq[0] = 1.0;
  dq[5] = -1.0;
  run_loop(s, ctrl, 6000, [&](int, const SimState&) { ctrl.set_control(dq); });
  const MotionLimits& lim = model().kin.limits;
  EXPECT_EQ(s.mode, SimMode::torque_control);
  EXPECT_TRUE(lim.within(s.q));
  EXPECT_NEAR(ctrl.q_d()[0], lim.q_max[0] - 0.1, 1e-12);
  EXPECT_NEAR(ctrl.q_d()[5], lim.q_min[5] + 0.1, 1e-12);
  EXPECT_NEAR(s.q[0], lim.q_max[0] - 0.1, 5e-3);
}

TEST(Wall, ZeroInInterior) {
  const MotionLimits lim = panda_limits();
  std::mt19937 rng(1);
  for (int k = 0; k < 10000; ++k) {
    JointVector q;
    for (int i = 0; i < kDof; ++i) {
      std::uniform_real_distribution<double> u(lim.q_min[i] + 0.1, lim.q_max[i] - 0.1);
      q[i] = u(rng);
    }
    const JointVector dq = JointVector::Random() * 2.0;
    ASSERT_EQ(joint_wall_torque(q, dq, lim), JointVector::Zero());
  }
}

TEST(Wall, SpringInsideMargin) {
  const MotionLimits lim = panda_limits();
  const WallParams wall;
  JointVector q = model().kin.neutral_q;
  q[2] = lim.q_max[2] - wall.margin / 2;
  const JointVector tau = joint_wall_torque(q, JointVector::Zero(), lim, wall);
  EXPECT_NEAR(tau[2], -wall.k * wall.margin / 2, 1e-12);

  // Damping only toward the limit.
  JointVector dq = JointVector::Zero();
  dq[2] = 0.5;
  EXPECT_NEAR(joint_wall_torque(q, dq, lim, wall)[2], tau[2] - wall.d * 0.5, 1e-12);
  dq[2] = -0.5;
  EXPECT_NEAR(joint_wall_torque(q, dq, lim, wall)[2], tau[2], 1e-12);

  q[2] = lim.q_min[2] + wall.margin / 4;
  EXPECT_NEAR(joint_wall_torque(q, JointVector::Zero(), lim, wall)[2], wall.k * wall.margin * 3 / 4, 1e-12);
}

TEST(Wall, ContinuousAtBoundary) {
  const MotionLimits lim = panda_limits();
  JointVector q = model().kin.neutral_q;
  for (const double eps : {1e-3, 1e-6, 1e-9}) {
    q[4] = lim.q_max[4] - 0.1 + eps;
    EXPECT_LE(std::abs(joint_wall_torque(q, JointVector::Zero(), lim)[4]), 300 * eps + 1e-12);
  }
}

TEST(TorqueRate, Examples) {
  const JointVector tau_max = panda_limits().tau_max;
  const JointVector prev = JointVector::Constant(3.0);
  EXPECT_EQ(saturate_torque_rate(prev, prev, 1.0, tau_max), prev);
  JointVector cmd = prev;
  cmd[0] += 10;
  EXPECT_DOUBLE_EQ(saturate_torque_rate(cmd, prev, 1.0, tau_max)[0], 4.0);
}

TEST(TorqueRate, AdversarialProperty) {
  const JointVector tau_max = panda_limits().tau_max;
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int k = 0; k < 100000; ++k) {
    JointVector cmd, prev;
    for (int i = 0; i < kDof; ++i) {
      cmd[i] = u(rng);
      prev[i] = std::clamp(u(rng) / 10, -tau_max[i], tau_max[i]);
    }
    const JointVector out = saturate_torque_rate(cmd, prev, 1.0, tau_max);
    ASSERT_TRUE((out.cwiseAbs().array() <= tau_max.array()).all());
    ASSERT_LE((out - prev).cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(Controllers, StepSetpointsRespectRateAndBounds) {
  const JointVector tau_max = model().kin.limits.tau_max;
  std::mt19937 rng(4);
  JointPositionController ctrl(model());
  SimState s = torque_state(model().kin.neutral_q);
  JointVector prev = JointVector::Zero();
  ctrl.start(s.q, s.dq, prev);
  for (int k = 0; k < 3000; ++k) {
    if (k % 250 == 0) {
      JointVector target = model().kin.neutral_q + 0.2 * JointVector::Random();
      ctrl.set_control(target);
    }
    const TorqueCommand cmd = ctrl.step(s.q, s.dq, kSimDt);
    ASSERT_LE((cmd.tau - prev).cwiseAbs().maxCoeff(), kDefaultDeltaTauMax + 1e-12);
    ASSERT_TRUE((cmd.tau.cwiseAbs().array() <= tau_max.array()).all());
    ASSERT_EQ(cmd.stamp_seq, static_cast<std::uint64_t>(k + 1));
    prev = cmd.tau;
    s = sim_step(s, cmd.tau, model());
  }
}

TEST(Controllers, PassiveAfterTransients) {
  JointPositionController ctrl(model());
  const JointVector q_d = model().kin.neutral_q;
  SimState s = torque_state(q_d + 0.1 * JointVector::Ones());
  ctrl.start(s.q, s.dq, JointVector::Zero());
  ctrl.set_control(q_d);
  const JointVector k = ctrl.gains().joint_stiffness;
  auto energy = [&](const SimState& st) {
    const JointVector e = q_d - st.q;
    return kinetic_energy(st, model()) + 0.5 * e.dot(k.cwiseProduct(e));
  };
  std::vector<double> e;
  for (int step = 0; step < 4000; ++step) {
    const TorqueCommand cmd = ctrl.step(s.q, s.dq, kSimDt);
    s = sim_step(s, cmd.tau, model());
    e.push_back(energy(s));
  }
  for (std::size_t i = 1000; i + 100 < e.size(); ++i) {
    ASSERT_LE(e[i + 100] - e[i], 1e-6) << "step " << i;
  }
}

TEST(Controllers, GainsValidated) {
  ImpedanceGains g = default_gains();
  g.filter_coeff = 0.0;
  EXPECT_THROW(JointPositionController(model(), g), std::invalid_argument);
  g = default_gains();
  g.joint_damping[0] = -1;
  JointPositionController ctrl(model());
  EXPECT_THROW(ctrl.set_gains(g), std::invalid_argument);
}

}  // namespace
}  // namespace pandakit
