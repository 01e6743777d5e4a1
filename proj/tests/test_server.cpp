#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include "cslam/errors.hpp"
#include "cslam/evaluation.hpp"
#include "cslam/server.hpp"
#include "cslam/simulator.hpp"
#include "net_util.hpp"

using namespace cslam;

namespace {

struct ServerFixture {
  Scenario scenario;
  SimResult sim;
  std::shared_ptr<Vocabulary> vocabulary;
  ServerConfig config;

  explicit ServerFixture(int n_agents, double duration_s = 30.0, std::uint64_t seed = 17) {
    scenario = default_scenario(n_agents, seed);
    scenario.duration_s = duration_s;
    scenario.landmark_count = 700;
    sim = generate(scenario);
    const auto corpus = collect_descriptor_corpus(sim, 3000, 11);
    vocabulary = std::make_shared<Vocabulary>(Vocabulary::train(corpus, 9, 3, 5));
    // Tests replay as fast as possible; an unbounded-ish queue keeps every
    // keyframe (the default capacity of 64 is exercised separately).
    config.ingest_queue_capacity = 1 << 20;
  }
};

bool wait_drained(const Server& server, double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  while (std::chrono::steady_clock::now() < deadline) {
    if (server.drained()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return server.drained();
}

std::string fetch_status(int port) {
  net::Socket socket = net::connect_tcp("127.0.0.1", port);
  REQUIRE(socket.valid());
  std::string text;
  char buf[4096];
  ssize_t n;
  while ((n = ::recv(socket.fd, buf, sizeof(buf), 0)) > 0) {
    text.append(buf, static_cast<std::size_t>(n));
  }
  return text;
}

long metric(const std::string& status, const std::string& name) {
  std::istringstream ss(status);
  std::string key;
  std::string value;
  while (ss >> key >> value) {
    if (key == name) return std::stol(value);
  }
  return -1;
}

}  // namespace

TEST_CASE("one agent streams keyframes over a real socket") {
  ServerFixture f(1);
  f.config.export_dir = "/tmp/cslam_test_server_exports";
  std::filesystem::remove_all(f.config.export_dir);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);
  REQUIRE(server.port() > 0);

  const auto report = play_stream(f.sim.streams[0].bytes, "127.0.0.1", server.port(), 0.0);
  CHECK(report.completed);
  CHECK(report.frames_sent == static_cast<int>(f.sim.streams[0].messages.size()) + 1);
  REQUIRE(wait_drained(server, 30.0));

  const auto totals = server.totals();
  CHECK(totals.agents == 1);
  CHECK(totals.maps == 1);
  CHECK(totals.keyframes_processed == f.sim.streams[0].messages.size());
  CHECK(totals.protocol_errors == 0);

  // Status endpoint serves one metric per line.
  const std::string status = fetch_status(server.status_port());
  CHECK(metric(status, "agents") == 1);
  CHECK(metric(status, "maps") == 1);
  CHECK(metric(status, "keyframes_processed") ==
        static_cast<long>(f.sim.streams[0].messages.size()));
  CHECK(metric(status, "drained") == 1);
  CHECK(status.find("agent.0.rate_kbs") != std::string::npos);
  CHECK(status.find("stage.decode.count") != std::string::npos);

  server.stop();
  // Exports flushed on shutdown.
  const Trajectory traj = load_tum(f.config.export_dir + "/agent_0.tum");
  CHECK(traj.size() == f.sim.streams[0].messages.size());
  CHECK(std::filesystem::exists(f.config.export_dir + "/loops.csv"));
  CHECK(std::filesystem::exists(f.config.export_dir + "/stats.txt"));
}

TEST_CASE("keyframe before hello closes only that session") {
  ServerFixture f(1, 15.0);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);

  {
    // Strip the hello frame: first frame is a keyframe.
    const auto& bytes = f.sim.streams[0].bytes;
    std::uint32_t hello_len;
    std::memcpy(&hello_len, bytes.data(), 4);
    const std::vector<std::uint8_t> no_hello(bytes.begin() + 4 + hello_len, bytes.end());
    net::Socket socket = net::connect_tcp("127.0.0.1", server.port());
    REQUIRE(socket.valid());
    net::send_all(socket.fd, no_hello.data(), no_hello.size());
    // Server closes the session; read returns EOF.
    char buf[16];
    (void)::recv(socket.fd, buf, sizeof(buf), 0);
  }

  // The server keeps serving a well-behaved agent afterwards.
  const auto report = play_stream(f.sim.streams[0].bytes, "127.0.0.1", server.port(), 0.0);
  CHECK(report.completed);
  REQUIRE(wait_drained(server, 30.0));
  const auto totals = server.totals();
  CHECK(totals.agents == 1);
  CHECK(totals.protocol_errors >= 1);
  CHECK(totals.keyframes_processed == f.sim.streams[0].messages.size());
  server.stop();
}

TEST_CASE("second connection with the same agent id is rejected") {
  ServerFixture f(1, 15.0);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);

  HelloMessage hello;
  hello.agent_id = 0;
  hello.front_end_label = "default";
  const auto frame = encode_hello(hello);

  net::Socket first = net::connect_tcp("127.0.0.1", server.port());
  REQUIRE(first.valid());
  REQUIRE(net::send_all(first.fd, frame.data(), frame.size()));
  std::this_thread::sleep_for(std::chrono::milliseconds(50));

  net::Socket second = net::connect_tcp("127.0.0.1", server.port());
  REQUIRE(second.valid());
  REQUIRE(net::send_all(second.fd, frame.data(), frame.size()));
  // The duplicate session gets closed.
  char buf[16];
  const ssize_t n = ::recv(second.fd, buf, sizeof(buf), 0);
  CHECK(n <= 0);
  CHECK(server.totals().sessions_rejected == 1);

  // Closing the first connection frees the id for reconnection.
  first.close_fd();
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  net::Socket third = net::connect_tcp("127.0.0.1", server.port());
  REQUIRE(third.valid());
  REQUIRE(net::send_all(third.fd, frame.data(), frame.size()));
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  CHECK(server.totals().sessions_rejected == 1);
  server.stop();
}

TEST_CASE("malformed frames are skipped without losing the stream") {
  ServerFixture f(1, 15.0);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);

  // Corrupt the magic of the second keyframe frame.
  auto bytes = f.sim.streams[0].bytes;
  std::size_t offset = 0;
  for (int skip = 0; skip < 2; ++skip) {
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + offset, 4);
    offset += 4 + len;
  }
  bytes[offset + 4 + 1] = 'X';

  const auto report = play_stream(bytes, "127.0.0.1", server.port(), 0.0);
  CHECK(report.completed);
  REQUIRE(wait_drained(server, 30.0));
  const auto totals = server.totals();
  CHECK(totals.keyframes_processed == f.sim.streams[0].messages.size() - 1);
  CHECK(totals.protocol_errors == 1);
  server.stop();
}

TEST_CASE("two concurrent agents fuse into one map over sockets") {
  ServerFixture f(2, 45.0, 19);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);

  std::thread t0([&] { play_stream(f.sim.streams[0].bytes, "127.0.0.1", server.port(), 0.0); });
  std::thread t1([&] { play_stream(f.sim.streams[1].bytes, "127.0.0.1", server.port(), 0.0); });
  t0.join();
  t1.join();
  REQUIRE(wait_drained(server, 120.0));

  const auto totals = server.totals();
  CHECK(totals.agents == 2);
  CHECK(totals.maps == 1);  // fused
  CHECK(totals.fusions == 1);
  CHECK(totals.keyframes_processed ==
        f.sim.streams[0].messages.size() + f.sim.streams[1].messages.size());
  server.stop();
}

TEST_CASE("full queues drop the newest keyframes and count them") {
  ServerFixture f(1, 25.0);
  f.config.ingest_queue_capacity = 4;
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);
  const auto report = play_stream(f.sim.streams[0].bytes, "127.0.0.1", server.port(), 0.0);
  CHECK(report.completed);
  REQUIRE(wait_drained(server, 60.0));
  const auto totals = server.totals();
  CHECK(totals.keyframes_processed + totals.keyframes_dropped ==
        f.sim.streams[0].messages.size());
  // Dropping keyframes must not corrupt the map: nodes equal processed count.
  const std::string status = fetch_status(server.status_port());
  long map_nodes = -1;
  std::istringstream ss(status);
  std::string key, value;
  while (ss >> key >> value) {
    if (key.starts_with("map.") && key.ends_with(".keyframes")) map_nodes = std::stol(value);
  }
  CHECK(map_nodes == static_cast<long>(totals.keyframes_processed));
  server.stop();
}

TEST_CASE("play reports a lost connection with a partial count") {
  ServerFixture f(1, 20.0);
  Server server(f.config, f.vocabulary);
  server.start("127.0.0.1", 0);
  const int port = server.port();
  std::thread killer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    server.stop();
  });
  // Paced playback so the shutdown lands mid-stream.
  const auto report = play_stream(f.sim.streams[0].bytes, "127.0.0.1", port, 0.05);
  killer.join();
  if (!report.completed) {
    CHECK(report.frames_sent < static_cast<int>(f.sim.streams[0].messages.size()) + 1);
    CHECK(!report.error.empty());
  }
}
