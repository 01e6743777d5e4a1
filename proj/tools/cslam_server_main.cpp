// Collaborative SLAM back-end server: accepts agent keyframe streams over
// TCP, closes loops, fuses maps, and serves a plain-text status endpoint on
// port+1.

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <memory>
#include <thread>

#include "cslam/bow.hpp"
#include "cslam/config.hpp"
#include "cslam/errors.hpp"
#include "cslam/server.hpp"

namespace {

std::atomic<bool> g_shutdown{false};

void handle_signal(int) { g_shutdown = true; }

// "host:port" -> (host, port)
bool parse_bind(const std::string& bind, std::string& host, int& port) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) return false;
  host = bind.substr(0, colon);
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (...) {
    return false;
  }
  return port >= 0 && port <= 65535;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collaborative SLAM back-end server"};
  std::string bind = "0.0.0.0:7000";
  std::string config_path;
  std::string vocab_path;
  std::string export_dir;
  std::string log_level = "info";
  std::string write_config;
  app.add_option("--bind", bind, "listen address host:port (status endpoint on port+1)");
  app.add_option("--config", config_path, "server config file");
  app.add_option("--vocab", vocab_path, "vocabulary file (overrides config)");
  app.add_option("--export-dir", export_dir, "trajectory/loop-log export directory");
  app.add_option("--log-level", log_level, "quiet|info|debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}));
  app.add_option("--write-default-config", write_config,
                 "write the default config to a file and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    if (!write_config.empty()) {
      cslam::ServerConfig{}.save(write_config);
      std::cout << "wrote default config to " << write_config << "\n";
      return 0;
    }

    cslam::ServerConfig config;
    if (!config_path.empty()) config = cslam::ServerConfig::load(config_path);
    if (!vocab_path.empty()) config.vocabulary_path = vocab_path;
    if (!export_dir.empty()) config.export_dir = export_dir;
    if (config.vocabulary_path.empty()) {
      std::cerr << "error: no vocabulary file (--vocab or vocabulary_path in config)\n";
      return 1;
    }

    std::string host;
    int port = 0;
    if (!parse_bind(bind, host, port)) {
      std::cerr << "error: --bind expects host:port\n";
      return 1;
    }

    auto vocabulary =
        std::make_shared<cslam::Vocabulary>(cslam::Vocabulary::load(config.vocabulary_path));
    if (log_level != "quiet") {
      std::cout << "vocabulary: " << vocabulary->num_words() << " words (k="
                << vocabulary->branching() << ", L=" << vocabulary->depth() << ")\n";
    }

    cslam::Server server(config, vocabulary);
    server.start(host, port);
    std::cout << "listening on " << host << ":" << server.port() << " (status on "
              << server.status_port() << ")\n";

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    auto last_report = std::chrono::steady_clock::now();
    while (!g_shutdown) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (log_level == "debug" &&
          std::chrono::steady_clock::now() - last_report > std::chrono::seconds(5)) {
        const auto t = server.totals();
        std::cout << "agents " << t.agents << " maps " << t.maps << " kfs "
                  << t.keyframes_processed << " loops " << t.loops_accepted << "/"
                  << t.loops_detected << " fusions " << t.fusions << "\n";
        last_report = std::chrono::steady_clock::now();
      }
    }
    std::cout << "shutting down\n";
    server.stop();
    const auto t = server.totals();
    std::cout << "processed " << t.keyframes_processed << " keyframes, accepted "
              << t.loops_accepted << " loops, " << t.fusions << " fusions\n";
    if (!config.export_dir.empty()) std::cout << "exports in " << config.export_dir << "\n";
  } catch (const cslam::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
