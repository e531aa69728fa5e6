#pragma once

// Reference datagrams and their byte images produced with Python's struct module.

#include <cstdint>
#include <string>
#include <vector>

#include "pandakit/protocol.hpp"

namespace pandakit::testing_util {

inline std::vector<std::uint8_t> from_hex(const std::string& hex) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
  return out;
}

// struct.pack("<QQ7d7d7d16dI", ...)
inline const std::string kStateHex =
    "2a0000000000000050d41200000000009a9999999999b93f9a9999999999c93f343333333333d33f9a9999999999d93f"
    "000000000000e03f343333333333e33f676666666666e63f7b14ae47e17a84bf7b14ae47e17a94bfb81e85eb51b89ebf"
    "7b14ae47e17aa4bf9a9999999999a9bfb81e85eb51b8aebfec51b81e85ebb1bf000000000000e03f000000000000f83f"
    "00000000000004400000000000000c40000000000000124000000000000016400000000000001a40000000000000f03f"
    "0000000000000000000000000000000000000000000000000000000000000000000000000000f0bf0000000000000000"
    "000000000000000000000000000000000000000000000000000000000000f0bf0000000000000000333333333333d33f"
    "0000000000000000000000000000e03f000000000000f03f05000000";

// struct.pack("<QQ7d", ...)
inline const std::string kCommandHex =
    "29000000000000000100000000000000000000000000f83f00000000000002c000000000000000000000000000c05540"
    "00000000000028c0fca9f1d24d62503f0000000000000840";

inline protocol::StateDatagram reference_state() {
  protocol::StateDatagram s;
  s.seq = 42;
  s.sim_time_us = 1234000;
  for (int i = 0; i < kDof; ++i) {
    s.q[i] = 0.1 * (i + 1);
    s.dq[i] = -0.01 * (i + 1);
    s.tau_J[i] = i + 0.5;
  }
  s.O_T_EE << 1, 0, 0, 0.3, 0, -1, 0, 0, 0, 0, -1, 0.5, 0, 0, 0, 1;
  s.error_flags = 5;
  return s;
}

inline protocol::CommandDatagram reference_command() {
  protocol::CommandDatagram c;
  c.seq_echo = 41;
  c.mode = protocol::CommandMode::torque;
  c.tau << 1.5, -2.25, 0, 87, -12, 1e-3, 3.0;
  return c;
}

}  // namespace pandakit::testing_util
