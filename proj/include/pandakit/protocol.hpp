#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>

#include "pandakit/errors.hpp"
#include "pandakit/types.hpp"

// Realtime UDP datagrams. Little-endian, fixed size, no padding.
//   state   (316 B): u64 seq | u64 sim_time_us | 7 f64 q | 7 f64 dq | 7 f64 tau_J
//                    | 16 f64 O_T_EE (column-major) | u32 error_flags
//   command  (72 B): u64 seq_echo | u64 mode | 7 f64 tau_cmd
namespace pandakit::protocol {

inline constexpr std::size_t kStateSize = 316;
inline constexpr std::size_t kCommandSize = 72;

enum class CommandMode : std::uint64_t { idle = 0, torque = 1 };

struct StateDatagram {
  std::uint64_t seq = 0;
  std::uint64_t sim_time_us = 0;
  JointVector q = JointVector::Zero();
  JointVector dq = JointVector::Zero();
  JointVector tau_J = JointVector::Zero();
  Pose O_T_EE = Pose::Identity();
  std::uint32_t error_flags = 0;

  bool operator==(const StateDatagram&) const = default;
};

struct CommandDatagram {
  std::uint64_t seq_echo = 0;
  CommandMode mode = CommandMode::idle;
  JointVector tau = JointVector::Zero();

  bool operator==(const CommandDatagram&) const = default;
};

using StateBytes = std::array<std::uint8_t, kStateSize>;
using CommandBytes = std::array<std::uint8_t, kCommandSize>;

namespace detail {

class Writer {
 public:
  explicit Writer(std::span<std::uint8_t> out) : out_(out) {}
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_[pos_++] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<std::uint8_t> out_;
  std::size_t pos_ = 0;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename U>
  U uint() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline StateBytes encode(const StateDatagram& s) {
  StateBytes out{};
  detail::Writer w(out);
  w.uint(s.seq);
  w.uint(s.sim_time_us);
  for (const JointVector* v : {&s.q, &s.dq, &s.tau_J}) {
    for (int i = 0; i < kDof; ++i) w.f64((*v)[i]);
  }
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 4; ++r) w.f64(s.O_T_EE(r, c));
  }
  w.uint(s.error_flags);
  return out;
}

inline CommandBytes encode(const CommandDatagram& c) {
  CommandBytes out{};
  detail::Writer w(out);
  w.uint(c.seq_echo);
  w.uint(static_cast<std::uint64_t>(c.mode));
  for (int i = 0; i < kDof; ++i) w.f64(c.tau[i]);
  return out;
}

inline StateDatagram decode_state(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kStateSize) throw ProtocolError("state datagram has wrong size");
  detail::Reader r(bytes);
  StateDatagram s;
  s.seq = r.uint<std::uint64_t>();
  s.sim_time_us = r.uint<std::uint64_t>();
  for (JointVector* v : {&s.q, &s.dq, &s.tau_J}) {
    for (int i = 0; i < kDof; ++i) (*v)[i] = r.f64();
  }
  for (int c = 0; c < 4; ++c) {
    for (int row = 0; row < 4; ++row) s.O_T_EE(row, c) = r.f64();
  }
  s.error_flags = r.uint<std::uint32_t>();
  return s;
}

inline CommandDatagram decode_command(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kCommandSize) throw ProtocolError("command datagram has wrong size");
  detail::Reader r(bytes);
  CommandDatagram c;
  c.seq_echo = r.uint<std::uint64_t>();
  const auto mode = r.uint<std::uint64_t>();
  if (mode > 1) throw ProtocolError("command datagram has unknown mode");
  c.mode = static_cast<CommandMode>(mode);
  for (int i = 0; i < kDof; ++i) c.tau[i] = r.f64();
  return c;
}

}  // namespace pandakit::protocol
