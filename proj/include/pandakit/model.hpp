#pragma once

#include <array>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pandakit/errors.hpp"
#include "pandakit/types.hpp"

namespace pandakit {

struct MotionLimits {
  JointVector q_min;
  JointVector q_max;
  JointVector dq_max;    // rad/s
  JointVector ddq_max;   // rad/s^2
  JointVector dddq_max;  // rad/s^3
  JointVector tau_max;   // N·m
  double v_max_cart = 1.7;    // m/s
  double a_max_cart = 13.0;   // m/s^2
  double j_max_cart = 6500.0; // m/s^3
  double omega_max = 2.5;     // rad/s

  bool valid() const {
    return (q_min.array() < q_max.array()).all() && (dq_max.array() > 0).all() &&
           (ddq_max.array() > 0).all() && (dddq_max.array() > 0).all() &&
           (tau_max.array() > 0).all() && v_max_cart > 0 && a_max_cart > 0 &&
           j_max_cart > 0 && omega_max > 0;
  }

  bool within(const JointVector& q) const {
    return (q.array() >= q_min.array()).all() && (q.array() <= q_max.array()).all();
  }
};

// One row of a modified (Craig) Denavit-Hartenberg table:
// T = RotX(alpha) * TransX(a) * RotZ(theta_offset + q) * TransZ(d).
struct DhRow {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;
};

struct RobotDescription {
  // Rows 0..6 are the joints; row 7 is the fixed flange transform.
  std::array<DhRow, kDof + 1> dh{};
  Pose flange_to_ee = Pose::Identity();
  MotionLimits limits;
  JointVector neutral_q;
};

struct LinkInertia {
  double mass = 0.0;                       // kg
  Vector3 com = Vector3::Zero();           // m, link frame
  Matrix3 inertia = Matrix3::Identity();   // kg·m^2 about the COM, link frame

  bool valid() const {
    if (!(mass > 0.0)) return false;
    if ((inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
    return Eigen::SelfAdjointEigenSolver<Matrix3>(inertia).eigenvalues().minCoeff() > 0.0;
  }
};

struct DynamicsParams {
  std::array<LinkInertia, kDof> links{};
  Vector3 gravity{0.0, 0.0, -9.81};  // base frame, m/s^2
  // Reflected rotor inertia added to the mass-matrix diagonal.
  JointVector armature = JointVector::Zero();
};

// The robot as seen by controllers and the simulator alike.
struct RobotModel {
  RobotDescription kin;
  DynamicsParams dyn;
};

inline MotionLimits panda_limits() {
  MotionLimits l;
  l.q_min << -2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973;
  l.q_max << 2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973;
  l.dq_max << 2.1750, 2.1750, 2.1750, 2.1750, 2.6100, 2.6100, 2.6100;
  l.ddq_max << 15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0;
  l.dddq_max << 7500.0, 3750.0, 5000.0, 6250.0, 7500.0, 10000.0, 10000.0;
  l.tau_max << 87.0, 87.0, 87.0, 87.0, 12.0, 12.0, 12.0;
  return l;
}

// Manufacturer-published kinematics of the Panda arm (no hand mounted).
inline RobotDescription panda_description() {
  using std::numbers::pi;
  RobotDescription d;
  d.dh = {{{0.0, 0.333, 0.0, 0.0},
           {0.0, 0.0, -pi / 2, 0.0},
           {0.0, 0.316, pi / 2, 0.0},
           {0.0825, 0.0, pi / 2, 0.0},
           {-0.0825, 0.384, -pi / 2, 0.0},
           {0.0, 0.0, pi / 2, 0.0},
           {0.088, 0.0, pi / 2, 0.0},
           {0.0, 0.107, 0.0, 0.0}}};
  d.limits = panda_limits();
  d.neutral_q << 0.0, -pi / 4, 0.0, -3 * pi / 4, 0.0, pi / 2, pi / 4;
  return d;
}

namespace detail {

inline LinkInertia link(double m, Vector3 c, double ixx, double ixy, double ixz, double iyy,
                        double iyz, double izz) {
  LinkInertia l;
  l.mass = m;
  l.com = c;
  l.inertia << ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz;
  return l;
}

}  // namespace detail

// Approximate published identification of the Panda's inertial parameters.
inline DynamicsParams panda_dynamics() {
  using detail::link;
  DynamicsParams p;
  p.links = {{
      link(4.970684, {3.875e-03, 2.081e-03, -0.04762}, 7.0337e-01, -1.3900e-04, 6.7720e-03,
           7.0661e-01, 1.9169e-02, 9.1170e-03),
      link(0.646926, {-3.141e-03, -0.02872, 3.495e-03}, 7.9620e-03, -3.9250e-03, 1.0254e-02,
           2.8110e-02, 7.0400e-04, 2.5995e-02),
      link(3.228604, {0.027518, 0.039252, -0.066502}, 3.7242e-02, -4.7610e-03, -1.1396e-02,
           3.6155e-02, -1.2805e-02, 1.0830e-02),
      link(3.587895, {-0.05317, 0.104419, 0.027454}, 2.5853e-02, 7.7960e-03, -1.3320e-03,
           1.9552e-02, 8.6410e-03, 2.8323e-02),
      link(1.225946, {-0.011953, 0.041065, -0.038437}, 3.5549e-02, -2.1170e-03, -4.0370e-03,
           2.9474e-02, 2.2900e-04, 8.6270e-03),
      link(1.666555, {0.060149, -0.014117, -0.010517}, 1.9640e-03, 1.0900e-04, -1.1580e-03,
           4.3540e-03, 3.4100e-04, 5.4330e-03),
      link(7.35522e-01, {0.010517, -0.004252, 0.061597}, 1.2516e-02, -4.2800e-04, -1.1960e-03,
           1.0027e-02, -7.4100e-04, 4.8150e-03),
  }};
  p.armature << 0.1, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05;
  return p;
}

inline RobotModel panda_model() { return {panda_description(), panda_dynamics()}; }

// Plain-text configuration: one `key = v1 v2 ...` entry per line, `#` starts a comment.
// Keys (all optional, defaults are the Panda values above):
//   dh1 .. dh7, flange   a d alpha theta_offset
//   flange_to_ee         16 values, row-major
//   q_min q_max dq_max ddq_max dddq_max tau_max neutral_q   7 values each
//   v_max_cart a_max_cart j_max_cart omega_max               1 value
//   link1.mass .. link7.mass      1 value
//   link1.com .. link7.com        x y z
//   link1.inertia ..              ixx ixy ixz iyy iyz izz
//   gravity                        x y z
//   armature                       7 values
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in) {
    ConfigFile cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw Error("config line " + std::to_string(lineno) + ": expected `key = value`");
        continue;
      }
      std::string key = trim(line.substr(0, eq));
      std::istringstream values(line.substr(eq + 1));
      std::vector<double> nums;
      std::string tok;
      while (values >> tok) {
        try {
          nums.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw Error("config line " + std::to_string(lineno) + ": not a number: " + tok);
        }
      }
      cfg.entries_[key] = std::move(nums);
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config file: " + path);
    return parse(f);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::vector<double>& get(const std::string& key, std::size_t n) const {
    const auto& v = entries_.at(key);
    if (v.size() != n)
      throw Error("config key " + key + ": expected " + std::to_string(n) + " values, got " +
                  std::to_string(v.size()));
    return v;
  }

  RobotModel apply(RobotModel m) const {
    auto vec7 = [&](const std::string& k, JointVector& out) {
      if (!has(k)) return;
      const auto& v = get(k, kDof);
      for (int i = 0; i < kDof; ++i) out[i] = v[i];
    };
    auto scalar = [&](const std::string& k, double& out) {
      if (has(k)) out = get(k, 1)[0];
    };
    for (int i = 0; i <= kDof; ++i) {
      const std::string k = i < kDof ? "dh" + std::to_string(i + 1) : "flange";
      if (!has(k)) continue;
      const auto& v = get(k, 4);
      m.kin.dh[i] = {v[0], v[1], v[2], v[3]};
    }
    if (has("flange_to_ee")) {
      const auto& v = get("flange_to_ee", 16);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m.kin.flange_to_ee(r, c) = v[r * 4 + c];
      if (!is_valid_pose(m.kin.flange_to_ee)) throw Error("config flange_to_ee is not a valid pose");
    }
    auto& l = m.kin.limits;
    vec7("q_min", l.q_min);
    vec7("q_max", l.q_max);
    vec7("dq_max", l.dq_max);
    vec7("ddq_max", l.ddq_max);
    vec7("dddq_max", l.dddq_max);
    vec7("tau_max", l.tau_max);
    vec7("neutral_q", m.kin.neutral_q);
    scalar("v_max_cart", l.v_max_cart);
    scalar("a_max_cart", l.a_max_cart);
    scalar("j_max_cart", l.j_max_cart);
    scalar("omega_max", l.omega_max);
    for (int i = 0; i < kDof; ++i) {
      const std::string p = "link" + std::to_string(i + 1) + ".";
      auto& link = m.dyn.links[i];
      scalar(p + "mass", link.mass);
      if (has(p + "com")) {
        const auto& v = get(p + "com", 3);
        link.com = {v[0], v[1], v[2]};
      }
      if (has(p + "inertia")) {
        const auto& v = get(p + "inertia", 6);
        link.inertia << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
      }
      if (!link.valid()) throw Error("config " + p + "* gives an invalid link inertia");
    }
    if (has("gravity")) {
      const auto& v = get("gravity", 3);
      m.dyn.gravity = {v[0], v[1], v[2]};
    }
    vec7("armature", m.dyn.armature);
    if (!l.valid()) throw Error("config limits are inconsistent");
    if (!((m.kin.neutral_q.array() > l.q_min.array()).all() &&
          (m.kin.neutral_q.array() < l.q_max.array()).all()))
      throw Error("config neutral_q must lie strictly inside the joint limits");
    return m;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::vector<double>> entries_;
};

inline RobotModel load_model(const std::string& path) {
  return ConfigFile::load(path).apply(panda_model());
}

}  // namespace pandakit
