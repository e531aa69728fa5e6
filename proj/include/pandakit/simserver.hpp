#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include "json.hpp"

#include "pandakit/errors.hpp"
#include "pandakit/kinematics.hpp"
#include "pandakit/model.hpp"
#include "pandakit/net.hpp"
#include "pandakit/protocol.hpp"
#include "pandakit/sim.hpp"

namespace pandakit {

enum class ClockMode { lockstep, wallclock };

inline constexpr double kGripperMaxWidth = 0.08;
inline constexpr int kMaxMissedCommands = 10;

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t tcp_port = 7100;
  std::uint16_t desk_port = 7101;
  std::uint16_t udp_port = 7200;
  double rate = 1000.0;
  ClockMode mode = ClockMode::lockstep;
  double object_width = 0.03;
  RobotModel model = panda_model();
  std::optional<JointVector> initial_q;
  std::string log_csv;
  std::string desk_user = "admin";
  std::string desk_pass = "admin";

  // Desk credentials from SIM_DESK_USER / SIM_DESK_PASS, when set.
  void apply_env() {
    if (const char* u = std::getenv("SIM_DESK_USER")) desk_user = u;
    if (const char* p = std::getenv("SIM_DESK_PASS")) desk_pass = p;
  }
};

struct GripperState {
  double width = kGripperMaxWidth;
  bool is_grasped = false;
};

struct DeskRecord {
  bool brakes_locked = true;
  bool fci_active = false;
};

// Simulated control unit: Desk and command channels (newline-delimited JSON over TCP) and the
// realtime UDP channel. In lockstep mode every command datagram advances the simulation by one
// 1 ms step and is answered with the resulting state; in wallclock mode a loop steps at `rate`.
class SimServer {
 public:
  using json = nlohmann::json;

  explicit SimServer(ServerConfig config) : config_(std::move(config)) {
    if (!config_.model.kin.limits.valid()) throw std::invalid_argument("server: invalid limits");
    if (!(config_.rate > 0.0)) throw std::invalid_argument("server: rate must be positive");
    if (!(config_.object_width > 0.0 && config_.object_width <= kGripperMaxWidth))
      throw std::invalid_argument("server: object width must lie in (0, 0.08]");
    sim_.q = config_.initial_q.value_or(config_.model.kin.neutral_q);
    if (!config_.model.kin.limits.within(sim_.q))
      throw std::invalid_argument("server: initial configuration outside joint limits");
  }
  SimServer(const SimServer&) = delete;
  SimServer& operator=(const SimServer&) = delete;
  ~SimServer() { stop(); }

  void start() {
    desk_listener_ = net::TcpListener::bind(config_.host, config_.desk_port);
    cmd_listener_ = net::TcpListener::bind(config_.host, config_.tcp_port);
    udp_ = net::UdpSocket::bind(config_.host, config_.udp_port);
    if (!config_.log_csv.empty()) {
      csv_.open(config_.log_csv);
      if (!csv_) throw Error("server: cannot open log file " + config_.log_csv);
      csv_ << "time";
      for (const char* name : {"q", "dq", "tau"}) {
        for (int i = 0; i < kDof; ++i) csv_ << ',' << name << i;
      }
      csv_ << '\n' << std::setprecision(17);
    }
    running_ = true;
    threads_.emplace_back([this] { accept_loop(desk_listener_, true); });
    threads_.emplace_back([this] { accept_loop(cmd_listener_, false); });
    threads_.emplace_back([this] {
      if (config_.mode == ClockMode::lockstep) lockstep_loop(); else wallclock_loop();
    });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    desk_listener_.shutdown();
    cmd_listener_.shutdown();
    udp_.shutdown();
    {
      std::lock_guard lock(conn_mutex_);
      for (auto& c : connections_) c->shutdown();
    }
    for (auto& t : threads_) t.join();
    threads_.clear();
    std::list<std::thread> conn_threads;
    {
      std::lock_guard lock(conn_mutex_);
      conn_threads.swap(conn_threads_);
    }
    for (auto& t : conn_threads) t.join();
    std::lock_guard lock(conn_mutex_);
    connections_.clear();
  }

  bool running() const { return running_; }
  std::uint16_t tcp_port() const { return cmd_listener_.port(); }
  std::uint16_t desk_port() const { return desk_listener_.port(); }
  std::uint16_t udp_port() const { return udp_.port(); }
  const ServerConfig& config() const { return config_; }

  SimState sim_state() const {
    std::lock_guard lock(core_mutex_);
    return sim_;
  }
  std::uint64_t seq() const {
    std::lock_guard lock(core_mutex_);
    return seq_;
  }
  GripperState gripper() const {
    std::lock_guard lock(core_mutex_);
    return gripper_;
  }

  // Request handlers, exposed for direct testing. `conn` identifies the TCP connection.
  json handle_desk(const json& req, bool& authenticated) {
    const std::string cmd = req.value("cmd", "");
    std::lock_guard lock(core_mutex_);
    if (cmd == "login") {
      authenticated = req.value("user", "") == config_.desk_user && req.value("pass", "") == config_.desk_pass;
      return authenticated ? ok() : fail("auth_failed");
    }
    if (cmd == "status") return ok({{"brakes_locked", desk_.brakes_locked}, {"fci_active", desk_.fci_active}});
    if (cmd != "unlock" && cmd != "lock" && cmd != "activate_fci" && cmd != "deactivate_fci")
      return fail("invalid_command");
    if (!authenticated) return fail("auth_failed");
    if (cmd == "unlock") {
      desk_.brakes_locked = false;
    } else if (cmd == "lock") {
      if (desk_.fci_active) return fail("invalid_transition");
      desk_.brakes_locked = true;
    } else if (cmd == "activate_fci") {
      if (desk_.brakes_locked) return fail("invalid_transition");
      desk_.fci_active = true;
    } else {
      if (owner_) return fail("invalid_transition");
      desk_.fci_active = false;
    }
    return ok({{"brakes_locked", desk_.brakes_locked}, {"fci_active", desk_.fci_active}});
  }

  json handle_command(const json& req, std::uint64_t conn, const net::Endpoint& peer) {
    const std::string cmd = req.value("cmd", "");
    if (cmd == "gripper_move" || cmd == "gripper_grasp") return handle_gripper(cmd, req);
    std::lock_guard lock(core_mutex_);
    if (cmd == "gripper_state") return ok({{"width", gripper_.width}, {"is_grasped", gripper_.is_grasped}});
    if (cmd == "connect") {
      if (!desk_.fci_active) return fail("fci_inactive");
      if (owner_ && *owner_ != conn) return fail("exclusive_lock");
      if (!req.contains("udp_port") || !req["udp_port"].is_number_unsigned())
        return fail("invalid_command");
      net::Endpoint ep = peer;
      ep.addr.sin_port = htons(req["udp_port"].get<std::uint16_t>());
      owner_ = conn;
      client_ = ep;
      send_state_locked();
      return ok({{"udp_port", udp_.port()},
                 {"clock", config_.mode == ClockMode::lockstep ? "lockstep" : "wallclock"},
                 {"rate", config_.rate}});
    }
    if (cmd == "recover") {
      try {
        sim_ = recover(sim_, config_.model.kin.limits);
      } catch (const NotInError&) {
        return fail("not_in_error");
      } catch (const StillMoving&) {
        return fail("still_moving");
      }
      return ok();
    }
    if (cmd == "debug_set_state") {
      if (config_.mode != ClockMode::lockstep) return fail("invalid_command");
      const auto q = joint_field(req, "q"), dq = joint_field(req, "dq");
      if (!q) return fail("invalid_command");
      sim_.q = *q;
      sim_.dq = dq.value_or(JointVector::Zero());
      return ok();
    }
    if (cmd == "start_torque_control" || cmd == "stop_control") {
      if (owner_ != conn) return fail("not_connected");
      if (cmd == "start_torque_control") {
        if (sim_.mode == SimMode::torque_control) return fail("busy");
        if (sim_.mode == SimMode::reflex_error) return fail("reflex_error");
        sim_.mode = SimMode::torque_control;
        missed_ = 0;
        return ok();
      }
      if (sim_.mode == SimMode::idle) return fail("not_running");
      if (sim_.mode == SimMode::torque_control) sim_.mode = SimMode::idle;
      return ok();
    }
    return fail("invalid_command");
  }

 private:
  static json ok(json extra = json::object()) {
    extra["ok"] = true;
    return extra;
  }
  static json fail(const std::string& code) { return {{"ok", false}, {"error", code}}; }

  static std::optional<JointVector> joint_field(const json& req, const char* key) {
    if (!req.contains(key) || !req[key].is_array() || req[key].size() != kDof) return std::nullopt;
    JointVector v;
    for (int i = 0; i < kDof; ++i) {
      if (!req[key][i].is_number()) return std::nullopt;
      v[i] = req[key][i].get<double>();
    }
    return v;
  }

  json handle_gripper(const std::string& cmd, const json& req) {
    if (gripper_busy_.exchange(true)) return fail("gripper_busy");
    struct Release {
      std::atomic<bool>& b;
      ~Release() { b = false; }
    } release{gripper_busy_};
    const double width = req.value("width", -1.0);
    const double speed = req.value("speed", 0.0);
    if (!(width >= 0.0 && width <= kGripperMaxWidth) || !(speed > 0.0)) return fail("invalid_command");
    GripperState next;
    bool success = true;
    double travel;
    {
      std::lock_guard lock(core_mutex_);
      if (cmd == "gripper_move") {
        next = {width, false};
      } else {
        const double eps_in = req.value("eps_in", 0.005), eps_out = req.value("eps_out", 0.005);
        const bool contact = gripper_.width >= config_.object_width && width <= config_.object_width + eps_out;
        const double final_width = contact ? config_.object_width : width;
        success = contact && width - eps_in <= config_.object_width && config_.object_width <= width + eps_out;
        next = {final_width, success};
      }
      travel = std::abs(next.width - gripper_.width);
    }
    if (config_.mode == ClockMode::wallclock)
      std::this_thread::sleep_for(std::chrono::duration<double>(std::min(travel / speed, 1.0)));
    std::lock_guard lock(core_mutex_);
    gripper_ = next;
    return ok({{"success", success}, {"width", next.width}, {"is_grasped", next.is_grasped}});
  }

  void accept_loop(net::TcpListener& listener, bool desk) {
    while (running_) {
      auto stream = listener.accept(100);
      if (!stream) continue;
      auto conn = std::make_shared<net::TcpStream>(std::move(*stream));
      std::lock_guard lock(conn_mutex_);
      if (!running_) break;
      connections_.push_back(conn);
      const std::uint64_t id = ++next_conn_id_;
      conn_threads_.emplace_back([this, conn, id, desk] { serve(conn, id, desk); });
    }
  }

  void serve(const std::shared_ptr<net::TcpStream>& conn, std::uint64_t id, bool desk) {
    bool authenticated = false;
    try {
      while (running_) {
        const auto line = conn->read_line(100);
        if (!line) continue;
        json resp;
        try {
          const json req = json::parse(*line);
          resp = desk ? handle_desk(req, authenticated) : handle_command(req, id, conn->peer());
        } catch (const json::exception&) {
          resp = fail("invalid_command");
        }
        conn->send_line(resp.dump());
      }
    } catch (const Disconnected&) {
    }
    if (!desk) release_owner(id);
    std::lock_guard lock(conn_mutex_);
    connections_.remove(conn);
  }

  void release_owner(std::uint64_t id) {
    std::lock_guard lock(core_mutex_);
    if (owner_ != id) return;
    owner_.reset();
    client_.reset();
    if (sim_.mode == SimMode::torque_control) trip_reflex(sim_, reflex::communication);
  }

  void step_locked(const std::optional<protocol::CommandDatagram>& cmd) {
    if (cmd) {
      last_tau_ = cmd->mode == protocol::CommandMode::torque ? cmd->tau : JointVector::Zero();
    }
    sim_ = sim_step(sim_, last_tau_, config_.model);
    check_reflex(sim_, config_.model.kin.limits);
    ++seq_;
    if (csv_) {
      const JointVector tau = measured_torque(sim_, config_.model);
      csv_ << sim_.sim_time();
      for (const JointVector* v : {&std::as_const(sim_.q), &std::as_const(sim_.dq), &tau}) {
        for (int i = 0; i < kDof; ++i) csv_ << ',' << (*v)[i];
      }
      csv_ << '\n';
    }
  }

  void send_state_locked() {
    if (!client_) return;
    protocol::StateDatagram s;
    s.seq = seq_;
    s.sim_time_us = sim_.sim_time_us;
    s.q = sim_.q;
    s.dq = sim_.dq;
    s.tau_J = measured_torque(sim_, config_.model);
    s.O_T_EE = fk(sim_.q, config_.model.kin);
    s.error_flags = sim_.error_flags;
    udp_.send_to(protocol::encode(s), *client_);
  }

  std::optional<protocol::CommandDatagram> receive(int timeout_ms) {
    std::array<std::uint8_t, 512> buf;
    net::Endpoint from;
    const auto n = udp_.recv_from(buf, &from, timeout_ms);
    if (!n || *n != protocol::kCommandSize) return std::nullopt;
    {
      std::lock_guard lock(core_mutex_);
      if (!client_ || !(from == *client_)) return std::nullopt;
    }
    try {
      return protocol::decode_command(std::span(buf.data(), *n));
    } catch (const ProtocolError&) {
      return std::nullopt;
    }
  }

  void lockstep_loop() {
    while (running_) {
      const auto cmd = receive(50);
      if (!cmd) continue;
      std::lock_guard lock(core_mutex_);
      step_locked(cmd);
      send_state_locked();
    }
  }

  void wallclock_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / config_.rate));
    auto next = clock::now();
    while (running_) {
      next += period;
      std::optional<protocol::CommandDatagram> latest;
      while (auto cmd = receive(0)) latest = cmd;
      {
        std::lock_guard lock(core_mutex_);
        if (sim_.mode == SimMode::torque_control) {
          const bool fresh = latest && latest->seq_echo + 2 >= seq_;
          missed_ = fresh ? 0 : missed_ + 1;
          if (missed_ > kMaxMissedCommands) trip_reflex(sim_, reflex::communication);
        }
        step_locked(latest);
        send_state_locked();
      }
      std::this_thread::sleep_until(next);
      if (clock::now() > next + 100 * period) next = clock::now();
    }
  }

  ServerConfig config_;
  std::atomic<bool> running_{false};

  mutable std::mutex core_mutex_;
  SimState sim_;
  DeskRecord desk_;
  GripperState gripper_;
  std::uint64_t seq_ = 0;
  JointVector last_tau_ = JointVector::Zero();
  int missed_ = 0;
  std::optional<std::uint64_t> owner_;
  std::optional<net::Endpoint> client_;
  std::ofstream csv_;
  std::atomic<bool> gripper_busy_{false};

  net::TcpListener desk_listener_;
  net::TcpListener cmd_listener_;
  net::UdpSocket udp_;
  std::vector<std::thread> threads_;

  std::mutex conn_mutex_;
  std::list<std::shared_ptr<net::TcpStream>> connections_;
  std::list<std::thread> conn_threads_;
  std::uint64_t next_conn_id_ = 0;
};

}  // namespace pandakit
