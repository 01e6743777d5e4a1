#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "cslam/config.hpp"
#include "cslam/map_manager.hpp"
#include "cslam/wire.hpp"

namespace cslam {

// Latency samples of one pipeline stage, summarized on demand.
class LatencyStats {
 public:
  void add(double ms);
  struct Summary {
    int count = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double max_ms = 0.0;
  };
  Summary summarize() const;

 private:
  std::vector<double> samples_;
};

// Network-facing collaborative back-end. Sessions decode concurrently and
// feed bounded per-agent FIFO queues; one worker applies keyframes to the
// map registry in arrival order, so registry commits are serialized. A
// second listener on status_port() serves the plain-text status snapshot,
// one "name value" metric per line, per connection.
class Server {
 public:
  Server(const ServerConfig& config, std::shared_ptr<const Vocabulary> vocabulary);
  ~Server();

  // Binds host:port (0 = ephemeral) plus the status listener on the next
  // port; throws BindFailure. Returns once accepting.
  void start(const std::string& host, int port);
  // Graceful shutdown: stops accepting, closes sessions, drains the queues,
  // writes exports (if export_dir configured).
  void stop();

  int port() const { return port_; }
  int status_port() const { return status_port_; }
  bool running() const { return running_; }

  // All queued keyframes applied and no session mid-frame.
  bool drained() const;
  std::string status_text() const;
  void write_exports() const;

  struct Totals {
    int agents = 0;
    int maps = 0;
    std::uint64_t keyframes_processed = 0;
    std::uint64_t keyframes_dropped = 0;
    std::uint64_t protocol_errors = 0;
    std::uint64_t sessions_opened = 0;
    std::uint64_t sessions_rejected = 0;
    int loops_detected = 0;
    int loops_accepted = 0;
    int loops_rejected = 0;
    int fusions = 0;
  };
  Totals totals() const;

 private:
  struct Session {
    int fd = -1;
    std::thread thread;
    std::uint32_t agent_id = 0;
    bool hello_seen = false;
  };

  struct QueueItem {
    Keyframe kf;
    std::string label;
  };

  void accept_loop();
  void status_loop();
  void session_loop(int fd);
  void ingest_loop();
  void enqueue(Keyframe kf, const std::string& label);
  double mono_seconds() const;

  ServerConfig config_;
  std::shared_ptr<const Vocabulary> vocabulary_;

  mutable std::mutex manager_mutex_;
  MapManager manager_;

  int listen_fd_ = -1;
  int status_fd_ = -1;
  int port_ = 0;
  int status_port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::thread status_thread_;
  std::thread ingest_thread_;

  mutable std::mutex sessions_mutex_;
  std::vector<std::unique_ptr<Session>> sessions_;
  std::vector<std::uint32_t> live_agents_;

  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::map<std::uint32_t, std::deque<QueueItem>> queues_;
  std::uint32_t last_served_ = 0;
  std::uint64_t enqueued_ = 0;
  std::uint64_t processed_ = 0;
  std::uint64_t dropped_ = 0;

  mutable std::mutex stats_mutex_;
  TrafficCounter traffic_;
  std::uint64_t protocol_errors_ = 0;
  std::uint64_t sessions_opened_ = 0;
  std::uint64_t sessions_rejected_ = 0;
  LatencyStats decode_stats_;
  LatencyStats bow_stats_;
  LatencyStats matching_stats_;
  LatencyStats prefilter_stats_;
  LatencyStats ransac_stats_;
  LatencyStats covariance_stats_;
  LatencyStats pgo_stats_;
  LatencyStats loop_latency_;  // end-to-end per accepted loop

  std::chrono::steady_clock::time_point start_time_;
};

}  // namespace cslam
