#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"

#include "pandakit/client.hpp"
#include "pandakit/mmc.hpp"

int main(int argc, char** argv) {
  std::string host = "127.0.0.1", user = "admin", pass = "admin", csv;
  std::uint16_t port = 7100, desk_port = 7101;
  double dx = 0.3, dy = 0.2, dz = 0.3, hz = 20.0, gain = 1.0, max_runtime = 60.0;
  bool baseline = false;

  CLI::App app{"Manipulability-maximising servo to an offset pose"};
  app.add_option("--host", host, "Simulator host")->capture_default_str();
  app.add_option("--port", port, "Command channel port")->capture_default_str();
  app.add_option("--desk-port", desk_port, "Desk channel port")->capture_default_str();
  app.add_option("--user", user, "Desk user")->capture_default_str();
  app.add_option("--pass", pass, "Desk password")->capture_default_str();
  app.add_option("--dx", dx, "Goal offset along the end-effector x axis, m")->capture_default_str();
  app.add_option("--dy", dy, "Goal offset along the end-effector y axis, m")->capture_default_str();
  app.add_option("--dz", dz, "Goal offset along the end-effector z axis, m")->capture_default_str();
  app.add_option("--hz", hz, "Servo loop rate, Hz")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--gain", gain, "Servo gain, 1/s")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--max-runtime", max_runtime, "Give up after this many seconds")->capture_default_str();
  app.add_flag("--baseline", baseline, "Disable the manipulability term (plain resolved rate)");
  app.add_option("--csv", csv, "Per-iteration log: time, e, manipulability, dq0..dq6");
  CLI11_PARSE(app, argc, argv);

  try {
    pandakit::Desk desk(host, user, pass, desk_port);
    desk.unlock();
    desk.activate_fci();

    pandakit::PandaOptions opts;
    opts.port = port;
    pandakit::Panda panda(host, opts);
    panda.move_to_start();

    pandakit::mmc::ServoGoal goal;
    goal.Tep = panda.get_pose() * pandakit::translation(dx, dy, dz);
    goal.gain = gain;
    pandakit::mmc::RunOptions run;
    run.params.maximise_manipulability = !baseline;
    run.max_runtime = max_runtime;
    const pandakit::mmc::ServoReport report = pandakit::mmc::run_mmc(panda, goal, hz, run);

    if (!csv.empty()) {
      std::ofstream out(csv);
      if (!out) throw pandakit::Error("cannot open " + csv);
      out << "time,e,manipulability";
      for (int i = 0; i < pandakit::kDof; ++i) out << ",dq" << i;
      out << '\n' << std::setprecision(17);
      for (const auto& it : report.log) {
        out << it.time << ',' << it.error << ',' << it.manipulability;
        for (int i = 0; i < pandakit::kDof; ++i) out << ',' << it.dq[i];
        out << '\n';
      }
    }
    std::cout << "arrived after " << report.iterations << " iterations, spatial error " << report.final_error
              << ", manipulability " << report.final_manipulability << '\n';
  } catch (const std::exception& e) {
    std::cerr << "mmc-demo: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
