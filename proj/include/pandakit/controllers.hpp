#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>

#include "pandakit/dynamics.hpp"
#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/model.hpp"
#include "pandakit/trajectory.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

struct ImpedanceGains {
  JointVector joint_stiffness;
  JointVector joint_damping;
  Twist cart_stiffness;
  Twist cart_damping;
  double nullspace_stiffness = 0.5;
  double filter_coeff = 1.0;

  bool valid() const {
    return joint_stiffness.allFinite() && joint_damping.allFinite() && cart_stiffness.allFinite() &&
           cart_damping.allFinite() && (joint_stiffness.array() >= 0).all() &&
           (joint_damping.array() >= 0).all() && (cart_stiffness.array() >= 0).all() &&
           (cart_damping.array() >= 0).all() && nullspace_stiffness >= 0.0 &&
           filter_coeff > 0.0 && filter_coeff <= 1.0;
  }
};

inline ImpedanceGains default_gains() {
  ImpedanceGains g;
  g.joint_stiffness << 600, 600, 600, 600, 250, 150, 50;
  g.joint_damping << 50, 50, 50, 20, 20, 20, 10;
  g.cart_stiffness << 2000, 2000, 2000, 20, 20, 20;
  g.cart_damping = 2.0 * g.cart_stiffness.cwiseSqrt();
  return g;
}

struct WallParams {
  double margin = 0.1;  // rad
  double k = 300.0;     // N·m/rad
  double d = 30.0;      // N·m·s/rad
};

inline constexpr double kDefaultDeltaTauMax = 1.0;  // N·m per 1 ms step

struct ControllerCommand {
  enum class Kind { joint_position, cart_pose, joint_velocity };
  Kind kind = Kind::joint_position;
  JointVector joint = JointVector::Zero();  // q_d or dq_d
  JointVector joint_rate = JointVector::Zero();  // dq_d for joint_position
  Vector3 position = Vector3::Zero();
  QuatXYZW orientation{0.0, 0.0, 0.0, 1.0};
  double stamp = 0.0;

  static ControllerCommand joint_position(const JointVector& q_d,
                                          const JointVector& dq_d = JointVector::Zero()) {
    ControllerCommand c;
    c.kind = Kind::joint_position;
    c.joint = q_d;
    c.joint_rate = dq_d;
    return c;
  }
  static ControllerCommand cart_pose(const Vector3& position, const QuatXYZW& orientation) {
    if (std::abs(orientation.norm() - 1.0) > 1e-9)
      throw InvalidCommand("cart_pose command needs a unit quaternion");
    ControllerCommand c;
    c.kind = Kind::cart_pose;
    c.position = position;
    c.orientation = orientation;
    return c;
  }
  static ControllerCommand joint_velocity(const JointVector& dq) {
    ControllerCommand c;
    c.kind = Kind::joint_velocity;
    c.joint = dq;
    return c;
  }
};

struct TorqueCommand {
  JointVector tau = JointVector::Zero();
  std::uint64_t stamp_seq = 0;
};

inline JointVector joint_wall_torque(const JointVector& q, const JointVector& dq,
                                     const MotionLimits& limits, const WallParams& wall = {}) {
  JointVector tau = JointVector::Zero();
  for (int i = 0; i < kDof; ++i) {
    const double upper = limits.q_max[i] - wall.margin;
    const double lower = limits.q_min[i] + wall.margin;
    if (q[i] > upper) {
      tau[i] = wall.k * (upper - q[i]) - (dq[i] > 0.0 ? wall.d * dq[i] : 0.0);
    } else if (q[i] < lower) {
      tau[i] = wall.k * (lower - q[i]) - (dq[i] < 0.0 ? wall.d * dq[i] : 0.0);
    }
  }
  return tau;
}

// Gravity is left to the robot; the command carries coriolis compensation only.
inline JointVector joint_impedance_torque(const JointVector& q, const JointVector& dq,
                                          const JointVector& q_d, const JointVector& dq_d,
                                          const ImpedanceGains& gains, const RobotModel& model,
                                          const WallParams& wall = {}) {
  return gains.joint_stiffness.cwiseProduct(q_d - q) + gains.joint_damping.cwiseProduct(dq_d - dq) +
         coriolis_vector(q, dq, model) + joint_wall_torque(q, dq, model.kin.limits, wall);
}

// Rotation vector taking `current` to `desired` in the base frame, along the shortest arc.
inline Vector3 orientation_error(const Eigen::Quaterniond& current, const Eigen::Quaterniond& desired) {
  Eigen::Quaterniond e = desired * current.conjugate();
  if (e.w() < 0.0) e.coeffs() = -e.coeffs();
  const double s = e.vec().norm();
  if (s < 1e-15) return 2.0 * e.vec();
  return 2.0 * std::atan2(s, e.w()) * e.vec() / s;
}

struct CartesianSetpoint {
  Vector3 position = Vector3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

inline JointVector cartesian_impedance_torque(const JointVector& q, const JointVector& dq,
                                              const CartesianSetpoint& setpoint,
                                              const ImpedanceGains& gains, const RobotModel& model,
                                              const WallParams& wall = {}) {
  const Pose t = fk(q, model.kin);
  const Jacobian j = jacobian_base(q, model.kin);
  Twist e;
  e.head<3>() = setpoint.position - position_of(t);
  e.tail<3>() = orientation_error(Eigen::Quaterniond(rotation_of(t)), setpoint.orientation);
  const Twist wrench = gains.cart_stiffness.cwiseProduct(e) - gains.cart_damping.cwiseProduct(j * dq);

  const Eigen::Matrix<double, 6, 6> jjt = j * j.transpose();
  const JointMatrix n = JointMatrix::Identity() - j.transpose() * jjt.ldlt().solve(j);
  const double kn = gains.nullspace_stiffness;
  const JointVector null_tau = kn * (model.kin.neutral_q - q) - 2.0 * std::sqrt(kn) * dq;

  return j.transpose() * wrench + n * null_tau + coriolis_vector(q, dq, model) +
         joint_wall_torque(q, dq, model.kin.limits, wall);
}

inline JointVector integrated_velocity_step(const JointVector& q_d, const JointVector& dq_cmd,
                                            double dt, const MotionLimits& limits,
                                            double margin = WallParams{}.margin) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrated_velocity_step: dt must be positive");
  const JointVector dq = dq_cmd.cwiseMax(-limits.dq_max).cwiseMin(limits.dq_max);
  const JointVector lo = (limits.q_min.array() + margin).matrix();
  const JointVector hi = (limits.q_max.array() - margin).matrix();
  return (q_d + dq * dt).cwiseMax(lo).cwiseMin(hi);
}

inline JointVector saturate_torque_rate(const JointVector& tau_cmd, const JointVector& tau_prev,
                                        double delta_max, const JointVector& tau_max) {
  const JointVector step = (tau_cmd - tau_prev).cwiseMax(-delta_max).cwiseMin(delta_max);
  return (tau_prev + step).cwiseMax(-tau_max).cwiseMin(tau_max);
}

// Single-slot latest-value box: writers overwrite, the control loop reads the newest value.
template <typename T>
class Mailbox {
 public:
  void put(T value) {
    std::lock_guard lock(mutex_);
    value_ = std::move(value);
  }
  std::optional<T> latest() const {
    std::lock_guard lock(mutex_);
    return value_;
  }
  std::optional<T> take() {
    std::lock_guard lock(mutex_);
    std::optional<T> v = std::move(value_);
    value_.reset();
    return v;
  }

 private:
  mutable std::mutex mutex_;
  std::optional<T> value_;
};

// A torque controller owned by the 1 kHz loop. start() latches the current state as setpoint;
// step() returns the rate-limited, saturated torque for one period.
class TorqueController {
 public:
  explicit TorqueController(RobotModel model, ImpedanceGains gains = default_gains())
      : model_(std::move(model)), gains_(gains) {
    if (!gains.valid()) throw std::invalid_argument("invalid impedance gains");
  }
  virtual ~TorqueController() = default;

  void set_gains(const ImpedanceGains& gains) {
    if (!gains.valid()) throw std::invalid_argument("invalid impedance gains");
    pending_gains_.put(gains);
  }
  void set_wall(const WallParams& wall) { wall_ = wall; }
  void set_delta_tau_max(double d) { delta_max_ = d; }

  void start(const JointVector& q, const JointVector& dq, const JointVector& tau_prev) {
    tau_prev_ = tau_prev;
    seq_ = 0;
    steps_ = 0;
    dt_ = 0.0;
    on_start(q, dq);
  }

  TorqueCommand step(const JointVector& q, const JointVector& dq, double dt) {
    if (auto g = pending_gains_.take()) gains_ = *g;
    const JointVector raw = compute(q, dq, dt);
    tau_prev_ = saturate_torque_rate(raw, tau_prev_, delta_max_, model_.kin.limits.tau_max);
    dt_ = dt;
    steps_.fetch_add(1);
    return {tau_prev_, ++seq_};
  }

  // Seconds of control time elapsed since start(); safe to call from any thread.
  double get_time() const { return static_cast<double>(steps_.load()) * dt_.load(); }

  const ImpedanceGains& gains() const { return gains_; }
  const RobotModel& model() const { return model_; }

 protected:
  virtual void on_start(const JointVector& q, const JointVector& dq) = 0;
  virtual JointVector compute(const JointVector& q, const JointVector& dq, double dt) = 0;

  RobotModel model_;
  ImpedanceGains gains_;
  WallParams wall_;

 private:
  Mailbox<ImpedanceGains> pending_gains_;
  double delta_max_ = kDefaultDeltaTauMax;
  JointVector tau_prev_ = JointVector::Zero();
  std::uint64_t seq_ = 0;
  std::atomic<std::uint64_t> steps_{0};
  std::atomic<double> dt_{0.0};
};

class JointPositionController : public TorqueController {
 public:
  using TorqueController::TorqueController;

  void set_control(const JointVector& q_d, const JointVector& dq_d = JointVector::Zero()) {
    command_.put(ControllerCommand::joint_position(q_d, dq_d));
  }

 protected:
  void on_start(const JointVector& q, const JointVector&) override {
    q_d_ = q;
    dq_d_.setZero();
  }
  JointVector compute(const JointVector& q, const JointVector& dq, double) override {
    if (auto c = command_.take()) {
      q_d_ = c->joint;
      dq_d_ = c->joint_rate;
    }
    return joint_impedance_torque(q, dq, q_d_, dq_d_, gains_, model_, wall_);
  }

 private:
  Mailbox<ControllerCommand> command_;
  JointVector q_d_ = JointVector::Zero();
  JointVector dq_d_ = JointVector::Zero();
};

class CartesianImpedanceController : public TorqueController {
 public:
  using TorqueController::TorqueController;

  // Orientation as a scalar-last quaternion (x, y, z, w).
  void set_control(const Vector3& position, const QuatXYZW& orientation) {
    command_.put(ControllerCommand::cart_pose(position, orientation));
  }

  const CartesianSetpoint& filtered_setpoint() const { return filtered_; }

 protected:
  void on_start(const JointVector& q, const JointVector&) override {
    const Pose t = fk(q, model_.kin);
    target_.position = position_of(t);
    target_.orientation = Eigen::Quaterniond(rotation_of(t));
    filtered_ = target_;
  }
  JointVector compute(const JointVector& q, const JointVector& dq, double) override {
    if (auto c = command_.take()) {
      target_.position = c->position;
      target_.orientation = from_xyzw(c->orientation);
    }
    const double a = gains_.filter_coeff;
    filtered_.position = a * target_.position + (1.0 - a) * filtered_.position;
    filtered_.orientation = filtered_.orientation.slerp(a, target_.orientation);
    return cartesian_impedance_torque(q, dq, filtered_, gains_, model_, wall_);
  }

 private:
  Mailbox<ControllerCommand> command_;
  CartesianSetpoint target_;
  CartesianSetpoint filtered_;
};

class IntegratedVelocityController : public TorqueController {
 public:
  using TorqueController::TorqueController;

  void set_control(const JointVector& dq) { command_.put(ControllerCommand::joint_velocity(dq)); }

  const JointVector& q_d() const { return q_d_; }

 protected:
  void on_start(const JointVector& q, const JointVector&) override {
    const JointVector lo = (model_.kin.limits.q_min.array() + wall_.margin).matrix();
    const JointVector hi = (model_.kin.limits.q_max.array() - wall_.margin).matrix();
    q_d_ = q.cwiseMax(lo).cwiseMin(hi);
    dq_cmd_.setZero();
  }
  JointVector compute(const JointVector& q, const JointVector& dq, double dt) override {
    if (auto c = command_.take()) dq_cmd_ = c->joint;
    const JointVector next = integrated_velocity_step(q_d_, dq_cmd_, dt, model_.kin.limits, wall_.margin);
    JointVector dq_d = dq_cmd_.cwiseMax(-model_.kin.limits.dq_max).cwiseMin(model_.kin.limits.dq_max);
    for (int i = 0; i < kDof; ++i) {
      if (next[i] == q_d_[i] && dq_d[i] != 0.0) dq_d[i] = 0.0;
    }
    q_d_ = next;
    return joint_impedance_torque(q, dq, q_d_, dq_d, gains_, model_, wall_);
  }

 private:
  Mailbox<ControllerCommand> command_;
  JointVector q_d_ = JointVector::Zero();
  JointVector dq_cmd_ = JointVector::Zero();
};

// Tracks a time-parameterised joint reference with joint impedance, then holds the final
// sample. finished() reports once the reference has ended and the robot has settled.
class TrajectoryController : public TorqueController {
 public:
  using Sampler = std::function<JointSample(double)>;

  TrajectoryController(RobotModel model, ImpedanceGains gains, Sampler sampler, double duration,
                       double settle_timeout = 3.0)
      : TorqueController(std::move(model), gains),
        sampler_(std::move(sampler)),
        duration_(duration),
        settle_timeout_(settle_timeout) {}

  bool finished() const { return finished_.load(); }
  double duration() const { return duration_; }

 protected:
  void on_start(const JointVector&, const JointVector&) override {
    t_ = 0.0;
    finished_ = false;
    goal_ = sampler_(duration_).q;
  }
  JointVector compute(const JointVector& q, const JointVector& dq, double dt) override {
    JointSample ref;
    if (t_ < duration_) {
      ref = sampler_(t_);
    } else {
      ref.q = goal_;
      const bool settled = (q - goal_).cwiseAbs().maxCoeff() < 2e-4 && dq.cwiseAbs().maxCoeff() < 2e-3;
      if (settled || t_ >= duration_ + settle_timeout_) finished_ = true;
    }
    t_ += dt;
    return joint_impedance_torque(q, dq, ref.q, ref.dq, gains_, model_, wall_);
  }

 private:
  Sampler sampler_;
  double duration_;
  double settle_timeout_;
  double t_ = 0.0;
  JointVector goal_ = JointVector::Zero();
  std::atomic<bool> finished_{false};
};

}  // namespace pandakit
