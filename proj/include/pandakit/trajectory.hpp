#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/model.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

struct AxisLimits {
  double v = 0.0;
  double a = 0.0;
  double j = 0.0;
};

// Seven constant-jerk segments: ramp-up / hold / ramp-down of a velocity change to the
// peak velocity, cruise, then the symmetric change back to rest.
struct SSegProfile {
  std::array<double, 7> segment_durations{};
  double p0 = 0.0;
  double v0 = 0.0;
  double a0 = 0.0;
  std::array<int, 7> jerk_signs{};
  double j_peak = 0.0;

  struct Sample {
    double p = 0.0, v = 0.0, a = 0.0, j = 0.0;
  };

  double duration() const {
    double t = 0.0;
    for (double d : segment_durations) t += d;
    return t;
  }

  Sample at(double t) const {
    Sample s{p0, v0, a0, 0.0};
    for (int k = 0; k < 7; ++k) {
      const double jerk = jerk_signs[k] * j_peak;
      const double d = segment_durations[k];
      const double dt = (k == 6) ? std::max(0.0, t) : std::clamp(t, 0.0, d);
      s.p += s.v * dt + s.a * dt * dt / 2 + jerk * dt * dt * dt / 6;
      s.v += s.a * dt + jerk * dt * dt / 2;
      s.a += jerk * dt;
      s.j = jerk;
      t -= d;
      if (t <= 0.0) break;
    }
    return s;
  }
};

namespace detail {

struct VelocityChange {
  double ramp = 0.0;  // time at +/- jerk
  double hold = 0.0;  // time at peak acceleration
  double duration() const { return 2.0 * ramp + hold; }
};

// Fastest jerk-limited change of velocity by |dv| starting and ending at zero acceleration.
inline VelocityChange velocity_change(double dv, const AxisLimits& lim) {
  dv = std::abs(dv);
  if (dv * lim.j >= lim.a * lim.a) return {lim.a / lim.j, dv / lim.a - lim.a / lim.j};
  return {std::sqrt(dv / lim.j), 0.0};
}

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

// Time-optimal jerk-limited profile from (x0, v0, a=0) to (xf, 0, 0).
// The profile family is parameterised by its peak velocity vp: change v0 -> vp, cruise at vp,
// change vp -> 0. The distance covered without cruise, D(vp), is continuous in vp; the optimum
// either cruises at +/-v or has zero cruise with D(vp) = xf - x0, so both are enumerated and
// the fastest candidate is kept.
inline SSegProfile plan_dof_profile(double x0, double v0, double xf, const AxisLimits& lim) {
  if (!(lim.v > 0.0 && lim.a > 0.0 && lim.j > 0.0))
    throw std::invalid_argument("plan_dof_profile: limits must be positive");
  if (std::abs(v0) > lim.v * (1.0 + 1e-12))
    throw InfeasibleStart("plan_dof_profile: initial velocity exceeds the velocity limit");
  v0 = std::clamp(v0, -lim.v, lim.v);

  SSegProfile prof;
  prof.p0 = x0;
  prof.v0 = v0;
  prof.j_peak = lim.j;
  const double h = xf - x0;
  if (h == 0.0 && v0 == 0.0) return prof;

  auto distance = [&](double vp) {
    return 0.5 * (v0 + vp) * detail::velocity_change(vp - v0, lim).duration() +
           0.5 * vp * detail::velocity_change(vp, lim).duration();
  };
  auto base_time = [&](double vp) {
    return detail::velocity_change(vp - v0, lim).duration() +
           detail::velocity_change(vp, lim).duration();
  };

  struct Candidate {
    double vp;
    double cruise;
    double time;
  };
  Candidate best{0.0, 0.0, std::numeric_limits<double>::infinity()};
  auto consider = [&](double vp, double cruise) {
    const double t = base_time(vp) + cruise;
    if (t < best.time) best = {vp, cruise, t};
  };

  for (const double vp : {lim.v, -lim.v}) {
    const double cruise = (h - distance(vp)) / vp;
    if (cruise >= 0.0) consider(vp, cruise);
  }

  // D(vp) is smooth between the breakpoints where either velocity change switches between
  // the jerk-only and the acceleration-saturated regime.
  constexpr int kGrid = 256;
  const double knee = lim.a * lim.a / lim.j;
  std::vector<double> grid;
  grid.reserve(kGrid + 7);
  for (int i = 0; i <= kGrid; ++i) grid.push_back(-lim.v + 2.0 * lim.v * i / kGrid);
  for (const double b : {v0, 0.0, v0 + knee, v0 - knee, knee, -knee}) {
    if (std::abs(b) < lim.v) grid.push_back(b);
  }
  std::sort(grid.begin(), grid.end());
  auto residual = [&](double vp) { return distance(vp) - h; };
  double lo = grid.front(), f_lo = residual(lo);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double hi = grid[i];
    const double f_hi = residual(hi);
    if (f_lo == 0.0) consider(lo, 0.0);
    if (f_lo * f_hi < 0.0) {
      double a = lo, b = hi, fa = f_lo;
      for (int it = 0; it < 200 && b - a > 0.0; ++it) {
        const double m = 0.5 * (a + b);
        if (m <= a || m >= b) break;
        const double fm = residual(m);
        if (fm == 0.0) {
          a = b = m;
          break;
        }
        if ((fm < 0.0) == (fa < 0.0)) {
          a = m;
          fa = fm;
        } else {
          b = m;
        }
      }
      const double root = std::abs(residual(a)) <= std::abs(residual(b)) ? a : b;
      consider(root, 0.0);
    }
    lo = hi;
    f_lo = f_hi;
  }
  if (f_lo == 0.0) consider(lo, 0.0);

  const auto up = detail::velocity_change(best.vp - v0, lim);
  const auto down = detail::velocity_change(best.vp, lim);
  const int s1 = detail::sign_of(best.vp - v0);
  const int s3 = -detail::sign_of(best.vp);
  prof.segment_durations = {up.ramp, up.hold, up.ramp, best.cruise, down.ramp, down.hold, down.ramp};
  prof.jerk_signs = {s1, 0, -s1, 0, s3, 0, -s3};
  return prof;
}

struct JointSample {
  JointVector q = JointVector::Zero();
  JointVector dq = JointVector::Zero();
  JointVector ddq = JointVector::Zero();
  JointVector dddq = JointVector::Zero();
};

// Velocity, acceleration and jerk bounds scaled as a uniform slow-down of time by 1/factor.
inline AxisLimits scaled(const AxisLimits& l, double factor) {
  return {l.v * factor, l.a * factor * factor, l.j * factor * factor * factor};
}

class JointTrajectory {
 public:
  struct Segment {
    std::array<SSegProfile, kDof> profiles;
    JointVector start, goal;
    double start_time = 0.0;
    double duration = 0.0;
  };

  JointTrajectory(std::vector<Segment> segments, std::vector<JointVector> waypoints)
      : segments_(std::move(segments)), waypoints_(std::move(waypoints)) {
    total_ = segments_.empty() ? 0.0 : segments_.back().start_time + segments_.back().duration;
  }

  double total_duration() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<JointVector>& waypoints() const { return waypoints_; }

  JointSample sample(double t) const {
    if (!(t >= 0.0 && t <= total_ + 1e-12)) throw OutOfRange("trajectory sample time out of range");
    JointSample s;
    if (t >= total_) {
      s.q = waypoints_.back();
      return s;
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double x, const Segment& seg) { return x < seg.start_time; });
    const Segment& seg = *std::prev(it);
    const double local = t - seg.start_time;
    for (int i = 0; i < kDof; ++i) {
      const SSegProfile& p = seg.profiles[i];
      const double own = p.duration();
      if (own <= 0.0 || seg.duration <= 0.0) {
        s.q[i] = seg.start[i];
        continue;
      }
      const double r = own / seg.duration;
      const auto ps = p.at(local * r);
      s.q[i] = ps.p;
      s.dq[i] = ps.v * r;
      s.ddq[i] = ps.a * r * r;
      s.dddq[i] = ps.j * r * r * r;
    }
    return s;
  }

 private:
  std::vector<Segment> segments_;
  std::vector<JointVector> waypoints_;
  double total_ = 0.0;
};

// Stops at every waypoint; per segment each joint is planned time-optimally and then all
// joints are uniformly time-stretched to the slowest one.
inline JointTrajectory plan_joint_waypoints(const std::vector<JointVector>& waypoints,
                                            const MotionLimits& limits, double speed_factor = 0.2) {
  if (waypoints.size() < 2) throw std::invalid_argument("plan_joint_waypoints: need >= 2 waypoints");
  if (!(speed_factor > 0.0 && speed_factor <= 1.0))
    throw std::invalid_argument("plan_joint_waypoints: speed_factor must lie in (0, 1]");
  for (const auto& w : waypoints) {
    if (!w.allFinite() || !limits.within(w))
      throw WaypointOutOfLimits("plan_joint_waypoints: waypoint outside joint limits");
  }
  std::vector<JointTrajectory::Segment> segments;
  double t = 0.0;
  for (std::size_t k = 0; k + 1 < waypoints.size(); ++k) {
    JointTrajectory::Segment seg;
    seg.start = waypoints[k];
    seg.goal = waypoints[k + 1];
    seg.start_time = t;
    for (int i = 0; i < kDof; ++i) {
      const AxisLimits lim =
          scaled({limits.dq_max[i], limits.ddq_max[i], limits.dddq_max[i]}, speed_factor);
      seg.profiles[i] = plan_dof_profile(seg.start[i], 0.0, seg.goal[i], lim);
      seg.duration = std::max(seg.duration, seg.profiles[i].duration());
    }
    t += seg.duration;
    segments.push_back(seg);
  }
  return JointTrajectory(std::move(segments), waypoints);
}

struct PoseSample {
  Pose pose = Pose::Identity();
  Twist velocity = Twist::Zero();  // base frame (v, w)
};

class CartesianTrajectory {
 public:
  struct Segment {
    Vector3 p0, p1;
    Matrix3 r0;
    Vector3 rotation;  // rotation vector of r0^T r1, in the r0 frame
    SSegProfile path;  // normalised path parameter u in [0, 1]
    double start_time = 0.0;
    double duration = 0.0;
  };

  CartesianTrajectory(std::vector<Segment> segments, std::vector<Pose> poses)
      : segments_(std::move(segments)), poses_(std::move(poses)) {
    total_ = segments_.empty() ? 0.0 : segments_.back().start_time + segments_.back().duration;
  }

  double total_duration() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<Pose>& poses() const { return poses_; }

  PoseSample sample_pose(double t) const {
    if (!(t >= 0.0 && t <= total_ + 1e-12)) throw OutOfRange("trajectory sample time out of range");
    PoseSample s;
    if (t >= total_) {
      s.pose = poses_.back();
      return s;
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                               [](double x, const Segment& seg) { return x < seg.start_time; });
    const Segment& seg = *std::prev(it);
    const auto u = seg.duration > 0.0 ? seg.path.at(t - seg.start_time) : SSegProfile::Sample{};
    const Vector3 dp = seg.p1 - seg.p0;
    const double angle = seg.rotation.norm();
    Matrix3 r = seg.r0;
    if (angle > 0.0) r = seg.r0 * Eigen::AngleAxisd(u.p * angle, seg.rotation / angle).toRotationMatrix();
    s.pose = make_pose(r, seg.p0 + u.p * dp);
    s.velocity.head<3>() = u.v * dp;
    s.velocity.tail<3>() = u.v * (seg.r0 * seg.rotation);
    return s;
  }

 private:
  std::vector<Segment> segments_;
  std::vector<Pose> poses_;
  double total_ = 0.0;
};

// Straight-line translation and shortest-arc rotation between consecutive poses. Both share one
// normalised clock u(t); its limits are the tighter of the translational ones (over the segment
// length) and the rotational ones (over the rotation angle, with angular acceleration and jerk
// bounds scaled from the translational ratio omega_max / v_max).
inline CartesianTrajectory plan_cartesian_waypoints(const std::vector<Pose>& poses,
                                                    const MotionLimits& limits,
                                                    double speed_factor = 0.2) {
  if (poses.size() < 2) throw std::invalid_argument("plan_cartesian_waypoints: need >= 2 poses");
  if (!(speed_factor > 0.0 && speed_factor <= 1.0))
    throw std::invalid_argument("plan_cartesian_waypoints: speed_factor must lie in (0, 1]");
  for (const auto& p : poses) {
    if (!is_valid_pose(p, 1e-6)) throw std::invalid_argument("plan_cartesian_waypoints: invalid pose");
  }
  const AxisLimits trans =
      scaled({limits.v_max_cart, limits.a_max_cart, limits.j_max_cart}, speed_factor);
  const double rot_ratio = limits.omega_max / limits.v_max_cart;
  const AxisLimits rot = {trans.v * rot_ratio, trans.a * rot_ratio, trans.j * rot_ratio};

  std::vector<CartesianTrajectory::Segment> segments;
  double t = 0.0;
  for (std::size_t k = 0; k + 1 < poses.size(); ++k) {
    CartesianTrajectory::Segment seg;
    seg.p0 = position_of(poses[k]);
    seg.p1 = position_of(poses[k + 1]);
    seg.r0 = rotation_of(poses[k]);
    const Eigen::AngleAxisd aa(seg.r0.transpose() * rotation_of(poses[k + 1]));
    if (aa.angle() > std::numbers::pi - 1e-9)
      throw DegenerateRotation("plan_cartesian_waypoints: antipodal orientations");
    seg.rotation = aa.axis() * aa.angle();
    seg.start_time = t;

    const double length = (seg.p1 - seg.p0).norm();
    const double angle = aa.angle();
    constexpr double inf = std::numeric_limits<double>::infinity();
    AxisLimits unit{inf, inf, inf};
    if (length > 0.0) unit = {trans.v / length, trans.a / length, trans.j / length};
    if (angle > 0.0) {
      unit.v = std::min(unit.v, rot.v / angle);
      unit.a = std::min(unit.a, rot.a / angle);
      unit.j = std::min(unit.j, rot.j / angle);
    }
    if (length > 0.0 || angle > 0.0) {
      seg.path = plan_dof_profile(0.0, 0.0, 1.0, unit);
      seg.duration = seg.path.duration();
    }
    t += seg.duration;
    segments.push_back(seg);
  }
  return CartesianTrajectory(std::move(segments), poses);
}

// Converts a Cartesian trajectory to joint references through ik, seeding each call with the
// previous solution so consecutive samples stay on one branch. Joint 7 is held at `q7`.
class CartesianJointSampler {
 public:
  CartesianJointSampler(const CartesianTrajectory& traj, const RobotDescription& desc,
                        const JointVector& q_start)
      : traj_(&traj), desc_(&desc), seed_(q_start), q7_(q_start[6]) {}

  JointSample operator()(double t) {
    JointSample s;
    const PoseSample ps = traj_->sample_pose(t);
    s.q = ik(ps.pose, q7_, seed_, *desc_);
    s.dq = joint_velocity(s.q, ps.velocity);
    constexpr double h = 1e-4;
    const double tp = std::min(t + h, traj_->total_duration());
    const double tm = std::max(t - h, 0.0);
    if (tp > tm) {
      const PoseSample a = traj_->sample_pose(tp), b = traj_->sample_pose(tm);
      const JointVector qa = ik(a.pose, q7_, s.q, *desc_);
      const JointVector qb = ik(b.pose, q7_, s.q, *desc_);
      s.ddq = (joint_velocity(qa, a.velocity) - joint_velocity(qb, b.velocity)) / (tp - tm);
    }
    seed_ = s.q;
    return s;
  }

 private:
  JointVector joint_velocity(const JointVector& q, const Twist& twist) const {
    JointVector dq = JointVector::Zero();
    const Eigen::Matrix<double, 6, 6> j6 = jacobian_base(q, *desc_).leftCols<6>();
    dq.head<6>() = j6.partialPivLu().solve(twist);
    return dq;
  }

  const CartesianTrajectory* traj_;
  const RobotDescription* desc_;
  JointVector seed_;
  double q7_;
};

// CSV columns: t, q_d0..q_d6, dq_d0..dq_d6.
inline void write_trajectory_csv(std::ostream& out, const JointTrajectory& traj, double dt = 1e-3) {
  out << "t";
  for (int i = 0; i < kDof; ++i) out << ",q_d" << i;
  for (int i = 0; i < kDof; ++i) out << ",dq_d" << i;
  out << '\n' << std::setprecision(17);
  const auto n = static_cast<long>(std::floor(traj.total_duration() / dt + 1e-9));
  for (long k = 0; k <= n + 1; ++k) {
    const double t = std::min(k * dt, traj.total_duration());
    const JointSample s = traj.sample(t);
    out << t;
    for (int i = 0; i < kDof; ++i) out << ',' << s.q[i];
    for (int i = 0; i < kDof; ++i) out << ',' << s.dq[i];
    out << '\n';
    if (t >= traj.total_duration()) break;
  }
}

}  // namespace pandakit
