// Tests for pandakit/trajectory.hpp.

#include <chrono>
#include <cmath>
#include <limits>
#include <algorithm>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pandakit/trajectory.hpp"
#include "test_util.hpp"
#include "trajectory_oracle.hpp"

namespace pandakit {
namespace {

using oracle::oracle_min_time;

// ---- limit check ------------------------------------------------------------------------
void expect_profile_within_limits(const SSegProfile& p, const AxisLimits& lim, double dt = 1e-4) {
  const double slack = 1e-9;
  const double T = p.duration();
  for (double t = 0; t <= T + dt; t += dt) {
    const auto s = p.at(std::min(t, T));
    ASSERT_LE(std::abs(s.v), lim.v + slack) << "t=" << t;
    ASSERT_LE(std::abs(s.a), lim.a + slack) << "t=" << t;
    ASSERT_LE(std::abs(s.j), lim.j + slack) << "t=" << t;
  }
}

// ---- plan_dof_profile ---------------------------------------------------------------------

TEST(DofProfile, ZeroMoveHasZeroDuration) {
  const auto p = plan_dof_profile(0.3, 0.0, 0.3, {1, 1, 1});
  EXPECT_EQ(p.duration(), 0.0);
  EXPECT_EQ(p.at(0.0).p, 0.3);
}

TEST(DofProfile, UnitMoveMatchesOracle) {
  const auto p = plan_dof_profile(0.0, 0.0, 1.0, {1, 1, 1});
  const double expected = oracle_min_time(0, 0, 1, 1, 1, 1);
  EXPECT_NEAR(p.duration(), expected, 1e-6);
  const auto end = p.at(p.duration());
  EXPECT_NEAR(end.p, 1.0, 1e-10);
  EXPECT_NEAR(end.v, 0.0, 1e-10);
  EXPECT_NEAR(end.a, 0.0, 1e-10);
}

TEST(DofProfile, CruiseAsymptote) {
  const AxisLimits lim{1.0, 1.0, 1.0};
  // Accelerating to v and back costs v/a + a/j each and covers v*(v/a + a/j) in total.
  const double t100 = plan_dof_profile(0, 0, 100, lim).duration();
  EXPECT_NEAR(t100, 100.0 / 1.0 + 1.0 / 1.0 + 1.0 / 1.0, 1e-9);
  const double t200 = plan_dof_profile(0, 0, 200, lim).duration();
  EXPECT_NEAR(t200 - t100, 100.0, 1e-9);
}

TEST(DofProfile, InfeasibleStart) {
  EXPECT_THROW(plan_dof_profile(0, 1.5, 1, {1, 1, 1}), InfeasibleStart);
  EXPECT_THROW(plan_dof_profile(0, 0, 1, {0, 1, 1}), std::invalid_argument);
}

TEST(DofProfile, RandomSuiteAgainstOracle) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> pos(-3, 3), lv(0.3, 3), la(0.3, 10), lj(1, 60), u(-1, 1);
  for (int k = 0; k < 1000; ++k) {
    const AxisLimits lim{lv(rng), la(rng), lj(rng)};
    const double x0 = pos(rng), xf = pos(rng);
    const double v0 = (k % 3 == 0) ? 0.0 : u(rng) * lim.v;
    const auto p = plan_dof_profile(x0, v0, xf, lim);
    const double oracle = oracle_min_time(x0, v0, xf, lim.v, lim.a, lim.j);
    ASSERT_NEAR(p.duration(), oracle, 1e-6) << "case " << k;
    const auto end = p.at(p.duration());
    ASSERT_NEAR(end.p, xf, 1e-10);
    ASSERT_NEAR(end.v, 0.0, 1e-10);
    ASSERT_NEAR(end.a, 0.0, 1e-10);
    if (k % 10 == 0) expect_profile_within_limits(p, lim, 1e-3);
  }
}

TEST(DofProfile, ContinuousAcrossSegments) {
  const auto p = plan_dof_profile(-0.4, 0.7, 1.3, {1.2, 2.0, 5.0});
  double t = 0;
  for (int k = 0; k < 6; ++k) {
    t += p.segment_durations[k];
    const auto l = p.at(t - 1e-9), r = p.at(t + 1e-9);
    EXPECT_NEAR(l.p, r.p, 1e-8);
    EXPECT_NEAR(l.v, r.v, 1e-8);
    EXPECT_NEAR(l.a, r.a, 1e-7);
  }
}

// ---- joint trajectories -------------------------------------------------------------------

TEST(JointTrajectory, IdenticalWaypointsTakeNoTime) {
  const MotionLimits lim = panda_limits();
  const JointVector q = panda_description().neutral_q;
  const auto traj = plan_joint_waypoints({q, q}, lim);
  EXPECT_EQ(traj.total_duration(), 0.0);
  const auto s = traj.sample(0.0);
  EXPECT_EQ(s.q, q);
}

TEST(JointTrajectory, SingleJointMatchesDofProfile) {
  const MotionLimits lim = panda_limits();
  const JointVector q0 = panda_description().neutral_q;
  JointVector q1 = q0;
  q1[0] += 0.5;
  const double f = 0.2;
  const auto traj = plan_joint_waypoints({q0, q1}, lim, f);
  const double oracle = oracle_min_time(q0[0], 0, q1[0], lim.dq_max[0] * f,
                                        lim.ddq_max[0] * f * f, lim.dddq_max[0] * f * f * f);
  EXPECT_NEAR(traj.total_duration(), oracle, 1e-6);

  // Symmetric move: the midpoint velocity is the profile's peak.
  const auto mid = traj.sample(traj.total_duration() / 2);
  const auto prof = traj.segments()[0].profiles[0];
  double vmax = 0;
  for (double t = 0; t <= prof.duration(); t += 1e-4) vmax = std::max(vmax, prof.at(t).v);
  EXPECT_NEAR(mid.dq[0], vmax, 1e-6);
  EXPECT_NEAR(mid.q[0], q0[0] + 0.25, 1e-9);
}

TEST(JointTrajectory, EndpointsAndErrors) {
  const MotionLimits lim = panda_limits();
  std::mt19937 rng(3);
  const JointVector a = testing_util::random_q(lim, rng), b = testing_util::random_q(lim, rng);
  const auto traj = plan_joint_waypoints({a, b}, lim);
  const auto s0 = traj.sample(0.0), s1 = traj.sample(traj.total_duration());
  EXPECT_LE((s0.q - a).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(s0.dq.norm() + s0.ddq.norm(), 1e-12);
  EXPECT_LE((s1.q - b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(s1.dq.norm(), 1e-12);
  const double near_end = std::nextafter(traj.total_duration(), 0.0);
  EXPECT_LE((traj.sample(near_end).q - b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(traj.sample(-1e-6), OutOfRange);
  EXPECT_THROW(traj.sample(traj.total_duration() + 1e-6), OutOfRange);

  JointVector bad = a;
  bad[3] = lim.q_max[3] + 0.1;
  EXPECT_THROW(plan_joint_waypoints({a, bad}, lim), WaypointOutOfLimits);
  EXPECT_THROW(plan_joint_waypoints({a}, lim), std::invalid_argument);
}

TEST(JointTrajectory, SynchronisationStretchesOnly) {
  const MotionLimits lim = panda_limits();
  std::mt19937 rng(11);
  for (int k = 0; k < 50; ++k) {
    const JointVector a = testing_util::random_q(lim, rng), b = testing_util::random_q(lim, rng);
    const auto traj = plan_joint_waypoints({a, b}, lim);
    const auto& seg = traj.segments()[0];
    double longest = 0;
    for (int i = 0; i < kDof; ++i) {
      const double own = seg.profiles[i].duration();
      EXPECT_LE(own, seg.duration + 1e-15);
      longest = std::max(longest, own);
    }
    EXPECT_EQ(longest, seg.duration);
  }
}

TEST(JointTrajectory, DenseSamplingRespectsLimits) {
  const MotionLimits lim = panda_limits();
  std::mt19937 rng(5);
  for (const double f : {0.2, 1.0}) {
    std::vector<JointVector> wps;
    for (int k = 0; k < 5; ++k) wps.push_back(testing_util::random_q(lim, rng));
    const auto traj = plan_joint_waypoints(wps, lim, f);
    const double slack = 1e-9;
    for (double t = 0; t <= traj.total_duration(); t += 1e-3) {
      const auto s = traj.sample(t);
      for (int i = 0; i < kDof; ++i) {
        ASSERT_GE(s.q[i], lim.q_min[i] - slack);
        ASSERT_LE(s.q[i], lim.q_max[i] + slack);
        ASSERT_LE(std::abs(s.dq[i]), lim.dq_max[i] * f + slack);
        ASSERT_LE(std::abs(s.ddq[i]), lim.ddq_max[i] * f * f + slack);
        ASSERT_LE(std::abs(s.dddq[i]), lim.dddq_max[i] * f * f * f + slack);
      }
    }
    for (std::size_t k = 0; k < wps.size(); ++k) {
      const double t = k == 0 ? 0.0 : traj.segments()[k - 1].start_time + traj.segments()[k - 1].duration;
      EXPECT_LE((traj.sample(std::min(t, traj.total_duration())).q - wps[k]).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(JointTrajectory, FiveWaypointPlanLatency) {
  const MotionLimits lim = panda_limits();
  std::mt19937 rng(9);
  std::vector<JointVector> wps;
  for (int k = 0; k < 5; ++k) wps.push_back(testing_util::random_q(lim, rng));
  const auto t0 = std::chrono::steady_clock::now();
  const auto traj = plan_joint_waypoints(wps, lim);
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GT(traj.total_duration(), 0.0);
  EXPECT_LT(dt, 0.1);
}

TEST(JointTrajectory, CsvExport) {
  const MotionLimits lim = panda_limits();
  const JointVector q0 = panda_description().neutral_q;
  JointVector q1 = q0;
  q1[2] += 0.2;
  const auto traj = plan_joint_waypoints({q0, q1}, lim);
  std::ostringstream out;
  write_trajectory_csv(out, traj, 0.01);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("t,q_d0,", 0), 0u);
  EXPECT_NE(header.find(",dq_d6"), std::string::npos);
  int rows = 0;
  std::string line, last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  EXPECT_GE(rows, static_cast<int>(traj.total_duration() / 0.01));
  EXPECT_EQ(std::stod(last.substr(0, last.find(','))), traj.total_duration());
}

// ---- Cartesian trajectories ---------------------------------------------------------------

double chord_distance(const Vector3& p, const Vector3& a, const Vector3& b) {
  const Vector3 d = (b - a).normalized();
  const Vector3 r = p - a;
  return (r - r.dot(d) * d).norm();
}

struct CodeBlockPoses {
  Pose t0, t1;
};
CodeBlockPoses code_block_poses() {
  const RobotDescription desc = panda_description();
  CodeBlockPoses p;
  p.t0 = fk(desc.neutral_q, desc);
  p.t0(1, 3) = 0.25;
  p.t1 = p.t0;
  p.t1(1, 3) -= 0.5;
  return p;
}

TEST(CartesianTrajectory, StaysOnChord) {
  const auto poses = code_block_poses();
  const auto traj = plan_cartesian_waypoints({poses.t0, poses.t1}, panda_limits());
  EXPECT_GT(traj.total_duration(), 0.0);
  const Vector3 a = position_of(poses.t0), b = position_of(poses.t1);
  double worst = 0;
  for (double t = 0; t <= traj.total_duration(); t += 1e-3) {
    const Pose p = traj.sample_pose(t).pose;
    worst = std::max(worst, chord_distance(position_of(p), a, b));
    EXPECT_LE(pose_error(p, poses.t0).orientation, 1e-12);
  }
  EXPECT_LE(worst, 1e-9);
  EXPECT_LE(pose_error(traj.sample_pose(traj.total_duration()).pose, poses.t1).position, 1e-12);
}

TEST(CartesianTrajectory, RespectsCartesianLimits) {
  const MotionLimits lim = panda_limits();
  auto poses = code_block_poses();
  poses.t1.block<3, 3>(0, 0) = poses.t1.block<3, 3>(0, 0) * rot_z(1.2) * rot_x(0.4);
  const double f = 0.5;
  const auto traj = plan_cartesian_waypoints({poses.t0, poses.t1}, lim, f);
  for (double t = 0; t <= traj.total_duration(); t += 1e-3) {
    const Twist v = traj.sample_pose(t).velocity;
    ASSERT_LE(v.head<3>().norm(), lim.v_max_cart * f + 1e-9);
    ASSERT_LE(v.tail<3>().norm(), lim.omega_max * f + 1e-9);
  }
  // The velocity is the derivative of the sampled pose.
  const double t = 0.37 * traj.total_duration(), h = 1e-6;
  const Pose pp = traj.sample_pose(t + h).pose, pm = traj.sample_pose(t - h).pose;
  const Twist v = traj.sample_pose(t).velocity;
  EXPECT_LE((v.head<3>() - (position_of(pp) - position_of(pm)) / (2 * h)).norm(), 1e-6);
  const Vector3 w = rotation_log(rotation_of(pp) * rotation_of(pm).transpose()) / (2 * h);
  EXPECT_LE((v.tail<3>() - w).norm(), 1e-6);
}

TEST(CartesianTrajectory, IdenticalPosesTakeNoTime) {
  const auto poses = code_block_poses();
  EXPECT_EQ(plan_cartesian_waypoints({poses.t0, poses.t0}, panda_limits()).total_duration(), 0.0);
}

TEST(CartesianTrajectory, AntipodalRotationRejected) {
  const auto poses = code_block_poses();
  Pose flipped = poses.t0;
  flipped.block<3, 3>(0, 0) = rotation_of(poses.t0) * rot_x(std::numbers::pi);
  EXPECT_THROW(plan_cartesian_waypoints({poses.t0, flipped}, panda_limits()), DegenerateRotation);
}

TEST(CartesianTrajectory, PlanLatency) {
  const auto poses = code_block_poses();
  const auto t0 = std::chrono::steady_clock::now();
  const auto traj = plan_cartesian_waypoints({poses.t0, poses.t1}, panda_limits());
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GT(traj.total_duration(), 0.0);
  EXPECT_LT(dt, 0.05);
}

TEST(CartesianTrajectory, JointSamplerFollowsPoses) {
  const RobotDescription desc = panda_description();
  const auto poses = code_block_poses();
  const JointVector q_start = ik(poses.t0, desc.neutral_q[6], desc.neutral_q, desc);
  const auto traj = plan_cartesian_waypoints({poses.t0, poses.t1}, desc.limits);
  CartesianJointSampler sampler(traj, desc, q_start);
  JointVector prev = q_start;
  for (double t = 0; t <= traj.total_duration(); t += 1e-2) {
    const JointSample s = sampler(t);
    const PoseSample ps = traj.sample_pose(t);
    EXPECT_LE(pose_error(fk(s.q, desc), ps.pose).position, 1e-8);
    EXPECT_LE((jacobian_base(s.q, desc) * s.dq - ps.velocity).norm(), 1e-8);
    EXPECT_LE((s.q - prev).cwiseAbs().maxCoeff(), 0.05);
    prev = s.q;
  }
}

TEST(CartesianTrajectory, JointSpaceMotionLeavesChord) {
  const RobotDescription desc = panda_description();
  const auto poses = code_block_poses();
  const JointVector q0 = ik(poses.t0, desc.neutral_q[6], desc.neutral_q, desc);
  const JointVector q1 = ik(poses.t1, desc.neutral_q[6], q0, desc);
  const auto traj = plan_joint_waypoints({q0, q1}, desc.limits);
  const Vector3 a = position_of(poses.t0), b = position_of(poses.t1);
  double worst = 0;
  for (double t = 0; t <= traj.total_duration(); t += 1e-3) {
    worst = std::max(worst, chord_distance(position_of(fk(traj.sample(t).q, desc)), a, b));
  }
  EXPECT_GT(worst, 1e-3);
}

}  // namespace
}  // namespace pandakit
