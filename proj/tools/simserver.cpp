#include <csignal>
#include <iostream>

#include "CLI11.hpp"

#include "pandakit/model.hpp"
#include "pandakit/simserver.hpp"

int main(int argc, char** argv) {
  pandakit::ServerConfig cfg;
  std::string mode = "lockstep";
  std::string config_path;

  CLI::App app{"Simulated robot control unit"};
  app.add_option("--host", cfg.host, "Address to bind")->capture_default_str();
  app.add_option("--tcp-port", cfg.tcp_port, "Command channel port")->capture_default_str();
  app.add_option("--desk-port", cfg.desk_port, "Desk channel port")->capture_default_str();
  app.add_option("--udp-port", cfg.udp_port, "Realtime channel port")->capture_default_str();
  app.add_option("--rate", cfg.rate, "Control rate in wallclock mode, Hz")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--mode", mode, "Clock mode")->capture_default_str()->check(CLI::IsMember({"lockstep", "wallclock"}));
  app.add_option("--object-width", cfg.object_width, "Width of the object between the fingers, m")
      ->capture_default_str()
      ->check(CLI::Range(1e-6, pandakit::kGripperMaxWidth));
  app.add_option("--config", config_path, "Robot parameter file")->check(CLI::ExistingFile);
  app.add_option("--log-csv", cfg.log_csv, "Write every simulated step to this CSV file");
  CLI11_PARSE(app, argc, argv);

  cfg.mode = mode == "wallclock" ? pandakit::ClockMode::wallclock : pandakit::ClockMode::lockstep;
  cfg.apply_env();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    if (!config_path.empty()) cfg.model = pandakit::load_model(config_path);
    pandakit::SimServer server(cfg);
    server.start();
    std::cout << "simserver: desk " << cfg.host << ':' << server.desk_port() << ", command " << cfg.host << ':'
              << server.tcp_port() << ", realtime udp " << cfg.host << ':' << server.udp_port() << " (" << mode
              << ")" << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    std::cout << "simserver: shutting down" << std::endl;
    server.stop();
  } catch (const std::exception& e) {
    std::cerr << "simserver: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
