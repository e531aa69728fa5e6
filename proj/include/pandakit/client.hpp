#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "pandakit/controllers.hpp"
#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/log_buffer.hpp"
#include "pandakit/model.hpp"
#include "pandakit/net.hpp"
#include "pandakit/protocol.hpp"
#include "pandakit/sim.hpp"
#include "pandakit/trajectory.hpp"

namespace pandakit {

enum class ControlMode { idle, torque };

struct RobotState {
  std::uint64_t seq = 0;
  double time = 0.0;  // controller clock, s
  JointVector q = JointVector::Zero();
  JointVector dq = JointVector::Zero();
  JointVector tau_J = JointVector::Zero();
  Pose O_T_EE = Pose::Identity();
  std::uint32_t error_flags = 0;
  ControlMode control_mode = ControlMode::idle;
};

inline constexpr std::size_t kRecentStates = 100;

class ControlException : public Error {
 public:
  ControlException(std::uint32_t flags, std::vector<RobotState> recent)
      : Error("control exception: " + reflex::describe(flags)), flags_(flags), recent_(std::move(recent)) {}

  std::uint32_t flags() const { return flags_; }
  // Up to the last 100 states received before the error, oldest first.
  const std::vector<RobotState>& recent_states() const { return recent_; }

 private:
  std::uint32_t flags_;
  std::vector<RobotState> recent_;
};

// Column-oriented copy of logged states.
struct StateLog {
  std::vector<std::uint64_t> seq;
  std::vector<double> time;
  std::vector<JointVector> q, dq, tau_J;
  std::vector<Pose> O_T_EE;

  std::size_t size() const { return time.size(); }
  bool empty() const { return time.empty(); }

  // time,q0..q6,dq0..dq6,tau0..tau6,ee_x,ee_y,ee_z,O_T_EE_0..O_T_EE_15 (column-major)
  void write_csv(std::ostream& out) const {
    out << "time";
    for (const char* name : {"q", "dq", "tau"}) {
      for (int i = 0; i < kDof; ++i) out << ',' << name << i;
    }
    out << ",ee_x,ee_y,ee_z";
    for (int i = 0; i < 16; ++i) out << ",O_T_EE_" << i;
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < size(); ++k) {
      out << time[k];
      for (const auto* col : {&q, &dq, &tau_J}) {
        for (int i = 0; i < kDof; ++i) out << ',' << (*col)[k][i];
      }
      for (int i = 0; i < 3; ++i) out << ',' << O_T_EE[k](i, 3);
      for (int i = 0; i < 16; ++i) out << ',' << O_T_EE[k](i % 4, i / 4);
      out << '\n';
    }
  }
};

struct MotionResult {
  bool success = false;
  double duration = 0.0;          // planned trajectory duration, s
  double joint_error = 0.0;       // max |q - q_goal|, rad
  double position_error = 0.0;    // m
  double orientation_error = 0.0; // rad
  std::optional<double> allowed_path_deviation;  // recorded, not enforced
};

[[noreturn]] inline void raise_error_code(const std::string& code, const std::string& what) {
  const std::string msg = what + ": " + code;
  if (code == "fci_inactive") throw FciInactive(msg);
  if (code == "exclusive_lock") throw ExclusiveLock(msg);
  if (code == "busy") throw BusyError(msg);
  if (code == "not_running") throw NotRunning(msg);
  if (code == "invalid_command") throw InvalidCommand(msg);
  if (code == "auth_failed") throw AuthFailed(msg);
  if (code == "invalid_transition") throw InvalidTransition(msg);
  if (code == "gripper_busy") throw GripperBusy(msg);
  if (code == "not_in_error") throw NotInError(msg);
  if (code == "still_moving") throw StillMoving(msg);
  if (code == "not_connected") throw Disconnected(msg);
  throw Error(msg);
}

// Request/response over a newline-delimited JSON TCP connection.
class JsonChannel {
 public:
  using json = nlohmann::json;

  JsonChannel(const std::string& host, std::uint16_t port) : stream_(net::TcpStream::connect(host, port)) {}

  json request(const json& req, int timeout_ms = 10000) {
    std::lock_guard lock(mutex_);
    stream_.send_line(req.dump());
    const auto line = stream_.read_line(timeout_ms);
    if (!line) throw Disconnected("no response to '" + req.value("cmd", "") + "'");
    json resp = json::parse(*line, nullptr, false);
    if (resp.is_discarded()) throw ProtocolError("malformed response");
    if (!resp.value("ok", false)) raise_error_code(resp.value("error", "unknown"), req.value("cmd", ""));
    return resp;
  }

 private:
  std::mutex mutex_;
  net::TcpStream stream_;
};

class Desk {
 public:
  Desk(const std::string& host, const std::string& username, const std::string& password,
       std::uint16_t port = 7101)
      : channel_(host, port) {
    channel_.request({{"cmd", "login"}, {"user", username}, {"pass", password}});
  }

  void unlock() { channel_.request({{"cmd", "unlock"}}); }
  void lock() { channel_.request({{"cmd", "lock"}}); }
  void activate_fci() { channel_.request({{"cmd", "activate_fci"}}); }
  void deactivate_fci() { channel_.request({{"cmd", "deactivate_fci"}}); }
  bool brakes_locked() { return channel_.request({{"cmd", "status"}}).at("brakes_locked").get<bool>(); }
  bool fci_active() { return channel_.request({{"cmd", "status"}}).at("fci_active").get<bool>(); }

 private:
  JsonChannel channel_;
};

struct GripperReading {
  double width = 0.0;
  bool is_grasped = false;
};

// Blocking gripper commands on their own connection; no realtime control.
class Gripper {
 public:
  explicit Gripper(const std::string& host, std::uint16_t port = 7100) : channel_(host, port) {}

  bool grasp(double width, double speed, double force, double epsilon_inner = 0.005,
             double epsilon_outer = 0.005) {
    const auto r = channel_.request({{"cmd", "gripper_grasp"}, {"width", width}, {"speed", speed},
                                     {"force", force}, {"eps_in", epsilon_inner}, {"eps_out", epsilon_outer}});
    return r.at("success").get<bool>();
  }
  bool move(double width, double speed) {
    return channel_.request({{"cmd", "gripper_move"}, {"width", width}, {"speed", speed}})
        .at("success")
        .get<bool>();
  }
  GripperReading read_once() {
    const auto r = channel_.request({{"cmd", "gripper_state"}});
    return {r.at("width").get<double>(), r.at("is_grasped").get<bool>()};
  }

 private:
  JsonChannel channel_;
};

struct PandaOptions {
  std::uint16_t port = 7100;
  double state_timeout = 2.0;   // s without a state before the link counts as lost
  bool record_commands = false; // keep every sent command datagram (see command_trace())
  RobotModel model = panda_model();
};

class Panda;

// Fixed-frequency loop helper. The first ok() returns immediately; each later call waits one
// period (advancing the simulation in lockstep mode) and returns false once max_runtime elapsed.
class ControlContext {
 public:
  ControlContext(Panda& panda, double frequency, std::optional<double> max_runtime)
      : panda_(&panda), period_(1.0 / frequency), max_runtime_(max_runtime) {
    if (!(frequency > 0.0)) throw std::invalid_argument("create_context: frequency must be positive");
  }

  bool ok();
  std::uint64_t iterations() const { return iterations_; }
  double period() const { return period_; }

 private:
  Panda* panda_;
  double period_;
  std::optional<double> max_runtime_;
  bool started_ = false;
  double start_ = 0.0;
  std::uint64_t iterations_ = 0;
};

// Robot handle. Owns the command connection and the realtime UDP link. In lockstep mode the
// control loop runs in the calling thread (each step is one command/state exchange); in
// wallclock mode a background thread answers every streamed state.
class Panda {
 public:
  using json = nlohmann::json;

  explicit Panda(const std::string& host, PandaOptions options = {})
      : options_(std::move(options)), channel_(host, options_.port),
        udp_(net::UdpSocket::bind("0.0.0.0", 0)), recent_(kRecentStates) {
    const json r = channel_.request({{"cmd", "connect"}, {"udp_port", udp_.port()}});
    lockstep_ = r.value("clock", "lockstep") == "lockstep";
    rate_ = r.value("rate", 1000.0);
    server_ = net::resolve(host, r.at("udp_port").get<std::uint16_t>());
    const auto first = receive_state(options_.state_timeout);
    if (!first) throw Disconnected("no state received after connect");
    {
      std::lock_guard lock(mutex_);
      process_state_locked(*first);
    }
    if (!lockstep_) {
      running_ = true;
      loop_thread_ = std::thread([this] { wallclock_loop(); });
    }
  }
  Panda(const Panda&) = delete;
  Panda& operator=(const Panda&) = delete;

  ~Panda() {
    try {
      bool active;
      {
        std::lock_guard lock(mutex_);
        active = controller_ != nullptr;
      }
      if (active) stop_controller();
    } catch (const std::exception&) {
    }
    running_ = false;
    if (loop_thread_.joinable()) loop_thread_.join();
  }

  bool lockstep() const { return lockstep_; }
  double rate() const { return rate_; }
  const RobotModel& model() const { return options_.model; }

  RobotState get_state() const {
    std::lock_guard lock(mutex_);
    if (link_lost_) throw Disconnected("realtime link lost");
    return last_state_;
  }
  // Wall time since the last state datagram arrived, s.
  double state_age() const {
    std::lock_guard lock(mutex_);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - last_state_wall_).count();
  }
  Pose get_pose() const { return get_state().O_T_EE; }
  Vector3 get_position() const { return position_of(get_pose()); }
  QuatXYZW get_orientation() const {
    Eigen::Quaterniond q(rotation_of(get_pose()));
    q.normalize();
    return to_xyzw(q);
  }

  // --- controller lifecycle -----------------------------------------------------------------

  void start_controller(std::shared_ptr<TorqueController> ctrl) {
    if (!ctrl) throw std::invalid_argument("start_controller: null controller");
    {
      std::lock_guard lock(mutex_);
      if (controller_ || ramp_active_) throw BusyError("start_controller: a controller is already running");
      if (pending_error_) throw_pending_locked();
    }
    channel_.request({{"cmd", "start_torque_control"}});
    std::lock_guard lock(mutex_);
    ctrl->start(last_state_.q, last_state_.dq, JointVector::Zero());
    controller_ = std::move(ctrl);
    last_state_.control_mode = ControlMode::torque;
  }

  // Ramps the commanded torque to zero over 100 steps, then returns the robot to idle.
  void stop_controller() {
    {
      std::lock_guard lock(mutex_);
      if (pending_error_) throw_pending_locked();
      if (!controller_) throw NotRunning("stop_controller: no controller running");
      controller_.reset();
      ramp_start_ = last_tau_;
      ramp_step_ = 0;
      ramp_active_ = true;
    }
    wait_until([this] { return !ramp_active_; });
    try {
      channel_.request({{"cmd", "stop_control"}});
    } catch (const NotRunning&) {
    }
    std::lock_guard lock(mutex_);
    last_state_.control_mode = ControlMode::idle;
    if (pending_error_) throw_pending_locked();
  }

  bool controller_running() const {
    std::lock_guard lock(mutex_);
    return controller_ != nullptr;
  }

  // Clears a reflex on the robot. The robot must have come to rest.
  void recover() {
    channel_.request({{"cmd", "recover"}});
    {
      std::lock_guard lock(mutex_);
      pending_error_.reset();
    }
    if (lockstep_) step_once();
  }

  ControlContext create_context(double frequency, std::optional<double> max_runtime = std::nullopt) {
    return ControlContext(*this, frequency, max_runtime);
  }

  // Lets `seconds` of control time pass.
  void advance(double seconds) {
    if (lockstep_) {
      const auto steps = static_cast<long>(std::llround(seconds * rate_));
      for (long k = 0; k < steps; ++k) step_once();
    } else {
      std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
  }

  // Current controller clock (sim time in lockstep, monotonic wall time otherwise).
  double now() const {
    if (lockstep_) {
      std::lock_guard lock(mutex_);
      return last_state_.time;
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  }

  // --- motions -------------------------------------------------------------------------------

  MotionResult move_to_start(double speed_factor = 0.2) {
    return move_to_joint_position(std::vector<JointVector>{options_.model.kin.neutral_q}, speed_factor);
  }

  MotionResult move_to_joint_position(const JointVector& goal, double speed_factor = 0.2,
                                      std::optional<ImpedanceGains> gains = std::nullopt) {
    return move_to_joint_position(std::vector<JointVector>{goal}, speed_factor, gains);
  }

  MotionResult move_to_joint_position(const std::vector<JointVector>& waypoints, double speed_factor = 0.2,
                                      std::optional<ImpedanceGains> gains = std::nullopt,
                                      std::optional<double> allowed_path_deviation = std::nullopt) {
    if (waypoints.empty()) throw std::invalid_argument("move_to_joint_position: no waypoints");
    ensure_idle();
    std::vector<JointVector> all{get_state().q};
    all.insert(all.end(), waypoints.begin(), waypoints.end());
    auto traj = std::make_shared<JointTrajectory>(plan_joint_waypoints(all, options_.model.kin.limits, speed_factor));
    auto sampler = [traj](double t) { return traj->sample(std::min(t, traj->total_duration())); };
    MotionResult result = run_motion(sampler, traj->total_duration(), gains);
    const RobotState s = get_state();
    result.joint_error = (s.q - waypoints.back()).cwiseAbs().maxCoeff();
    const PoseError pe = pose_error(s.O_T_EE, fk(waypoints.back(), options_.model.kin));
    result.position_error = pe.position;
    result.orientation_error = pe.orientation;
    result.success = result.joint_error < 1e-3;
    result.allowed_path_deviation = allowed_path_deviation;
    return result;
  }

  MotionResult move_to_pose(const Pose& pose, double speed_factor = 0.2,
                            std::optional<ImpedanceGains> gains = std::nullopt) {
    return move_to_pose(std::vector<Pose>{pose}, speed_factor, gains);
  }

  // Straight-line Cartesian motion through `poses`, converted to joint references by ik with
  // joint 7 held at its current angle.
  MotionResult move_to_pose(const std::vector<Pose>& poses, double speed_factor = 0.2,
                            std::optional<ImpedanceGains> gains = std::nullopt,
                            std::optional<double> allowed_path_deviation = std::nullopt) {
    if (poses.empty()) throw std::invalid_argument("move_to_pose: no poses");
    ensure_idle();
    const RobotState start = get_state();
    std::vector<Pose> all{fk(start.q, options_.model.kin)};
    all.insert(all.end(), poses.begin(), poses.end());
    const CartesianTrajectory traj = plan_cartesian_waypoints(all, options_.model.kin.limits, speed_factor);

    // Resolve the whole path up front so an unreachable pose fails before the robot moves.
    const double dt = 1.0 / rate_;
    const auto n = static_cast<std::size_t>(std::ceil(traj.total_duration() / dt));
    auto table = std::make_shared<std::vector<JointSample>>();
    table->reserve(n + 1);
    CartesianJointSampler cart(traj, options_.model.kin, start.q);
    for (std::size_t k = 0; k <= n; ++k) table->push_back(cart(std::min(k * dt, traj.total_duration())));
    auto sampler = [table, dt](double t) {
      const auto k = static_cast<std::size_t>(std::llround(std::max(t, 0.0) / dt));
      return (*table)[std::min(k, table->size() - 1)];
    };
    MotionResult result = run_motion(sampler, traj.total_duration(), gains);
    const RobotState s = get_state();
    const PoseError pe = pose_error(s.O_T_EE, poses.back());
    result.position_error = pe.position;
    result.orientation_error = pe.orientation;
    result.joint_error = (s.q - table->back().q).cwiseAbs().maxCoeff();
    result.success = pe.position <= 1e-3 && pe.orientation <= 1e-3;
    result.allowed_path_deviation = allowed_path_deviation;
    return result;
  }

  // --- logging -------------------------------------------------------------------------------

  void enable_logging(std::size_t n_steps) {
    std::lock_guard lock(mutex_);
    log_.reset(n_steps);
    logging_ = true;
  }
  void disable_logging() {
    std::lock_guard lock(mutex_);
    logging_ = false;
  }
  StateLog get_log() const {
    std::vector<RobotState> states;
    {
      std::lock_guard lock(mutex_);
      states = log_.snapshot();
    }
    StateLog log;
    for (const RobotState& s : states) {
      log.seq.push_back(s.seq);
      log.time.push_back(s.time);
      log.q.push_back(s.q);
      log.dq.push_back(s.dq);
      log.tau_J.push_back(s.tau_J);
      log.O_T_EE.push_back(s.O_T_EE);
    }
    return log;
  }

  std::vector<protocol::CommandDatagram> command_trace() const {
    std::lock_guard lock(mutex_);
    return trace_;
  }

  // Overwrites the simulated joint state (lockstep servers only); used for fault injection.
  void debug_set_state(const JointVector& q, const JointVector& dq = JointVector::Zero()) {
    channel_.request({{"cmd", "debug_set_state"},
                      {"q", std::vector<double>(q.data(), q.data() + kDof)},
                      {"dq", std::vector<double>(dq.data(), dq.data() + kDof)}});
  }

  // One command/state exchange (lockstep only).
  void step_once() {
    if (!lockstep_) throw std::logic_error("step_once: only available in lockstep mode");
    protocol::CommandDatagram cmd;
    {
      std::lock_guard lock(mutex_);
      if (link_lost_) throw Disconnected("realtime link lost");
      cmd = make_command_locked();
    }
    udp_.send_to(protocol::encode(cmd), server_);
    const auto s = receive_state(options_.state_timeout);
    std::lock_guard lock(mutex_);
    if (!s) {
      link_lost_locked();
      if (!pending_error_) throw Disconnected("realtime link lost");
      return;
    }
    process_state_locked(*s);
  }

  void raise_pending() {
    std::lock_guard lock(mutex_);
    if (pending_error_) throw_pending_locked();
  }

 private:
  void ensure_idle() const {
    std::lock_guard lock(mutex_);
    if (controller_ || ramp_active_) throw BusyError("a motion or controller is already active");
  }

  MotionResult run_motion(TrajectoryController::Sampler sampler, double duration,
                          const std::optional<ImpedanceGains>& gains) {
    auto ctrl = std::make_shared<TrajectoryController>(options_.model, gains.value_or(default_gains()),
                                                       std::move(sampler), duration);
    start_controller(ctrl);
    wait_until([&] { return ctrl->finished(); });
    stop_controller();
    MotionResult r;
    r.duration = duration;
    return r;
  }

  // Runs the loop (lockstep) or polls (wallclock) until `done` or a pending control error.
  template <typename F>
  void wait_until(F&& done) {
    for (;;) {
      {
        std::lock_guard lock(mutex_);
        if (pending_error_) {
          controller_.reset();
          ramp_active_ = false;
          throw_pending_locked();
        }
      }
      if (done()) return;
      if (lockstep_) {
        step_once();
      } else {
        std::this_thread::sleep_for(std::chrono::microseconds(500));
      }
    }
  }

  [[noreturn]] void throw_pending_locked() {
    const ControlException e = *pending_error_;
    pending_error_.reset();
    last_state_.control_mode = ControlMode::idle;
    throw e;
  }

  protocol::CommandDatagram make_command_locked() {
    protocol::CommandDatagram cmd;
    cmd.seq_echo = last_state_.seq;
    if (ramp_active_) {
      ++ramp_step_;
      cmd.mode = protocol::CommandMode::torque;
      cmd.tau = ramp_start_ * (1.0 - static_cast<double>(ramp_step_) / kRampSteps);
      if (ramp_step_ >= kRampSteps) ramp_active_ = false;
    } else if (controller_) {
      cmd.mode = protocol::CommandMode::torque;
      cmd.tau = controller_->step(last_state_.q, last_state_.dq, 1.0 / rate_).tau;
    }
    last_tau_ = cmd.tau;
    if (options_.record_commands) trace_.push_back(cmd);
    return cmd;
  }

  void process_state_locked(const protocol::StateDatagram& d) {
    RobotState s;
    s.seq = d.seq;
    s.time = static_cast<double>(d.sim_time_us) * 1e-6;
    s.q = d.q;
    s.dq = d.dq;
    s.tau_J = d.tau_J;
    s.O_T_EE = d.O_T_EE;
    s.error_flags = d.error_flags;
    s.control_mode = (controller_ || ramp_active_) ? ControlMode::torque : ControlMode::idle;
    last_state_ = s;
    last_state_wall_ = std::chrono::steady_clock::now();
    recent_.push(s);
    if (logging_) log_.push(s);
    if (s.error_flags != 0 && (controller_ || ramp_active_) && !pending_error_) {
      pending_error_.emplace(s.error_flags, recent_.snapshot());
      controller_.reset();
      ramp_active_ = false;
    }
  }

  void link_lost_locked() {
    link_lost_ = true;
    if ((controller_ || ramp_active_) && !pending_error_) {
      pending_error_.emplace(reflex::communication, recent_.snapshot());
    }
    controller_.reset();
    ramp_active_ = false;
  }

  std::optional<protocol::StateDatagram> receive_state(double timeout_s) {
    std::array<std::uint8_t, 512> buf;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() < 0) return std::nullopt;
      net::Endpoint from;
      const auto n = udp_.recv_from(buf, &from, static_cast<int>(left.count()) + 1);
      if (!n || *n != protocol::kStateSize) continue;
      return protocol::decode_state(std::span(buf.data(), *n));
    }
  }

  void wallclock_loop() {
    std::array<std::uint8_t, 512> buf;
    while (running_) {
      net::Endpoint from;
      const auto n = udp_.recv_from(buf, &from, 20);
      if (!n || *n != protocol::kStateSize) {
        std::lock_guard lock(mutex_);
        const double idle = std::chrono::duration<double>(std::chrono::steady_clock::now() - last_state_wall_).count();
        if (idle > options_.state_timeout && !link_lost_) link_lost_locked();
        continue;
      }
      protocol::CommandDatagram cmd;
      {
        std::lock_guard lock(mutex_);
        process_state_locked(protocol::decode_state(std::span(buf.data(), *n)));
        cmd = make_command_locked();
      }
      udp_.send_to(protocol::encode(cmd), server_);
    }
  }

  static constexpr int kRampSteps = 100;

  PandaOptions options_;
  JsonChannel channel_;
  net::UdpSocket udp_;
  net::Endpoint server_;
  bool lockstep_ = true;
  double rate_ = 1000.0;

  mutable std::mutex mutex_;
  RobotState last_state_;
  std::chrono::steady_clock::time_point last_state_wall_ = std::chrono::steady_clock::now();
  std::shared_ptr<TorqueController> controller_;
  bool ramp_active_ = false;
  int ramp_step_ = 0;
  JointVector ramp_start_ = JointVector::Zero();
  JointVector last_tau_ = JointVector::Zero();
  std::optional<ControlException> pending_error_;
  bool link_lost_ = false;
  LogBuffer<RobotState> recent_;
  LogBuffer<RobotState> log_;
  bool logging_ = false;
  std::vector<protocol::CommandDatagram> trace_;

  std::atomic<bool> running_{false};
  std::thread loop_thread_;
};

inline bool ControlContext::ok() {
  panda_->raise_pending();
  if (!started_) {
    started_ = true;
    start_ = panda_->now();
    ++iterations_;
    return !max_runtime_ || *max_runtime_ >= 0.0;
  }
  if (panda_->lockstep()) {
    const long steps = std::max(1L, std::lround(period_ * panda_->rate()));
    for (long k = 0; k < steps; ++k) {
      panda_->step_once();
      panda_->raise_pending();
    }
  } else {
    const double target = start_ + static_cast<double>(iterations_) * period_;
    const double wait = target - panda_->now();
    if (wait > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    panda_->raise_pending();
  }
  const double elapsed = panda_->now() - start_;
  if (max_runtime_ && elapsed > *max_runtime_) return false;
  ++iterations_;
  return true;
}

}  // namespace pandakit
