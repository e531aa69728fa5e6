#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "pandakit/client.hpp"

// Logs the lateral move between y = +0.25 and y = -0.25 once as a Cartesian motion and once as a
// joint motion, for xy path plots.
int main(int argc, char** argv) {
  std::string host = "127.0.0.1", user = "admin", pass = "admin";
  std::string cart_csv = "cartesian_motion.csv", joint_csv = "joint_motion.csv";
  std::uint16_t port = 7100, desk_port = 7101;

  CLI::App app{"Record Cartesian and joint-space lateral motions"};
  app.add_option("--host", host, "Simulator host")->capture_default_str();
  app.add_option("--port", port, "Command channel port")->capture_default_str();
  app.add_option("--desk-port", desk_port, "Desk channel port")->capture_default_str();
  app.add_option("--user", user, "Desk user")->capture_default_str();
  app.add_option("--pass", pass, "Desk password")->capture_default_str();
  app.add_option("--cartesian-csv", cart_csv, "Output for the Cartesian motion")->capture_default_str();
  app.add_option("--joint-csv", joint_csv, "Output for the joint motion")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    pandakit::Desk desk(host, user, pass, desk_port);
    desk.unlock();
    desk.activate_fci();
    pandakit::PandaOptions opts;
    opts.port = port;
    pandakit::Panda panda(host, opts);
    const auto& kin = panda.model().kin;

    pandakit::Pose t0 = pandakit::fk(kin.neutral_q, kin);
    t0(1, 3) = 0.25;
    pandakit::Pose t1 = t0;
    t1(1, 3) = -0.25;

    auto save = [](const pandakit::StateLog& log, const std::string& path) {
      std::ofstream out(path);
      if (!out) throw pandakit::Error("cannot open " + path);
      log.write_csv(out);
      std::cout << "wrote " << log.size() << " states to " << path << '\n';
    };

    panda.move_to_pose(t0);
    panda.enable_logging(20000);
    panda.move_to_pose(t1);
    panda.disable_logging();
    save(panda.get_log(), cart_csv);

    const pandakit::JointVector q0 = pandakit::ik(t0, kin.neutral_q[6], panda.get_state().q, kin);
    const pandakit::JointVector q1 = pandakit::ik(t1, kin.neutral_q[6], q0, kin);
    panda.move_to_joint_position(q0);
    panda.enable_logging(20000);
    panda.move_to_joint_position(q1);
    panda.disable_logging();
    save(panda.get_log(), joint_csv);
  } catch (const std::exception& e) {
    std::cerr << "lateral-logs: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
