#include "cslam/server.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "cslam/errors.hpp"
#include "net_util.hpp"

namespace cslam {

void LatencyStats::add(double ms) {
  if (samples_.size() < 200000) samples_.push_back(ms);
}

LatencyStats::Summary LatencyStats::summarize() const {
  Summary s;
  s.count = static_cast<int>(samples_.size());
  if (samples_.empty()) return s;
  std::vector<double> sorted = samples_;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean_ms = sum / sorted.size();
  s.p50_ms = sorted[sorted.size() / 2];
  s.p90_ms = sorted[sorted.size() * 9 / 10];
  s.max_ms = sorted.back();
  return s;
}

Server::Server(const ServerConfig& config, std::shared_ptr<const Vocabulary> vocabulary)
    : config_(config), vocabulary_(vocabulary), manager_(config, vocabulary) {}

Server::~Server() {
  if (running_) stop();
}

double Server::mono_seconds() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time_).count();
}

void Server::start(const std::string& host, int port) {
  start_time_ = std::chrono::steady_clock::now();
  net::Socket listener = net::listen_tcp(host, port, &port_);
  if (!listener.valid()) {
    throw BindFailure("cannot bind " + host + ":" + std::to_string(port));
  }
  net::Socket status = net::listen_tcp(host, port_ == 0 ? 0 : port_ + 1, &status_port_);
  if (!status.valid()) {
    // Fall back to an ephemeral status port before giving up.
    status = net::listen_tcp(host, 0, &status_port_);
    if (!status.valid()) throw BindFailure("cannot bind status listener on " + host);
  }
  listen_fd_ = listener.fd;
  status_fd_ = status.fd;
  listener.fd = -1;  // ownership moves to the threads
  status.fd = -1;
  running_ = true;
  stopping_ = false;
  accept_thread_ = std::thread([this] { accept_loop(); });
  status_thread_ = std::thread([this] { status_loop(); });
  ingest_thread_ = std::thread([this] { ingest_loop(); });
}

void Server::stop() {
  if (!running_) return;
  stopping_ = true;
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (status_fd_ >= 0) ::shutdown(status_fd_, SHUT_RDWR);
  std::vector<std::unique_ptr<Session>> sessions;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& session : sessions_) {
      if (session->fd >= 0) ::shutdown(session->fd, SHUT_RDWR);
    }
    sessions.swap(sessions_);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  if (status_thread_.joinable()) status_thread_.join();
  // Join session threads without holding the sessions mutex; their teardown
  // paths take it.
  for (auto& session : sessions) {
    if (session->thread.joinable()) session->thread.join();
  }
  {
    std::lock_guard lock(sessions_mutex_);
    live_agents_.clear();
  }
  queue_cv_.notify_all();
  if (ingest_thread_.joinable()) ingest_thread_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  if (status_fd_ >= 0) ::close(status_fd_);
  listen_fd_ = -1;
  status_fd_ = -1;
  running_ = false;
  if (!config_.export_dir.empty()) write_exports();
}

void Server::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) break;
      continue;
    }
    const int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(sessions_mutex_);
    auto session = std::make_unique<Session>();
    session->fd = fd;
    Session* raw = session.get();
    sessions_.push_back(std::move(session));
    {
      std::lock_guard stats_lock(stats_mutex_);
      ++sessions_opened_;
    }
    raw->thread = std::thread([this, fd] { session_loop(fd); });
  }
}

void Server::status_loop() {
  while (!stopping_) {
    const int fd = ::accept(status_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) break;
      continue;
    }
    const std::string text = status_text();
    net::send_all(fd, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
    ::close(fd);
  }
}

void Server::session_loop(int fd) {
  FrameReader reader;
  std::uint8_t buf[65536];
  bool hello_seen = false;
  std::uint32_t agent_id = 0;
  std::string label = "default";
  std::uint64_t last_seq = 0;
  bool have_seq = false;
  bool fatal = false;

  const auto protocol_error = [&] {
    std::lock_guard lock(stats_mutex_);
    ++protocol_errors_;
  };

  while (!fatal && !stopping_) {
    const ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
    if (n <= 0) break;
    reader.feed(buf, static_cast<std::size_t>(n));
    std::vector<std::uint8_t> payload;
    while (!fatal && reader.next(payload)) {
      const auto t0 = std::chrono::steady_clock::now();
      const DecodeResult decoded = decode_frame(payload);
      const double decode_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      {
        std::lock_guard lock(stats_mutex_);
        decode_stats_.add(decode_ms);
      }

      if (std::holds_alternative<DecodeError>(decoded)) {
        protocol_error();
        // Framing is intact; skip the bad frame and continue with the next.
        continue;
      }
      if (const auto* hello = std::get_if<HelloMessage>(&decoded)) {
        if (hello_seen) {
          protocol_error();
          fatal = true;
          break;
        }
        {
          std::lock_guard lock(sessions_mutex_);
          if (std::find(live_agents_.begin(), live_agents_.end(), hello->agent_id) !=
              live_agents_.end()) {
            std::lock_guard stats_lock(stats_mutex_);
            ++sessions_rejected_;
            fatal = true;  // agent id already has a live session
            break;
          }
          live_agents_.push_back(hello->agent_id);
        }
        hello_seen = true;
        agent_id = hello->agent_id;
        label = hello->front_end_label.empty() ? "default" : hello->front_end_label;
        continue;
      }
      const auto& kf_msg = std::get<KeyframeMessage>(decoded);
      if (!hello_seen) {
        protocol_error();
        fatal = true;  // protocol rule: hello first
        break;
      }
      if (kf_msg.agent_id != agent_id) {
        protocol_error();
        fatal = true;
        break;
      }
      if (have_seq && kf_msg.kf_seq <= last_seq) {
        protocol_error();
        continue;  // duplicate or reordered frame, drop it
      }
      last_seq = kf_msg.kf_seq;
      have_seq = true;
      {
        std::lock_guard lock(stats_mutex_);
        traffic_.account(agent_id, payload.size() + 4, mono_seconds());
      }
      enqueue(kf_msg.to_keyframe(), label);
    }
    if (reader.broken()) {
      protocol_error();
      break;
    }
  }

  ::close(fd);
  if (hello_seen) {
    std::lock_guard lock(sessions_mutex_);
    live_agents_.erase(std::remove(live_agents_.begin(), live_agents_.end(), agent_id),
                       live_agents_.end());
  }
  std::lock_guard lock(sessions_mutex_);
  for (auto& session : sessions_) {
    if (session->fd == fd) {
      session->fd = -1;
      break;
    }
  }
}

void Server::enqueue(Keyframe kf, const std::string& label) {
  std::lock_guard lock(queue_mutex_);
  auto& queue = queues_[kf.id.agent];
  if (static_cast<int>(queue.size()) >= config_.ingest_queue_capacity) {
    // Absolute poses make dropped keyframes harmless; drop the newest.
    ++dropped_;
    return;
  }
  queue.push_back({std::move(kf), label});
  ++enqueued_;
  queue_cv_.notify_one();
}

void Server::ingest_loop() {
  while (true) {
    QueueItem item;
    bool have = false;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] {
        if (stopping_) return true;
        for (const auto& [agent, queue] : queues_) {
          if (!queue.empty()) return true;
        }
        return false;
      });
      // Round-robin over agents so one fast stream cannot starve the rest.
      auto it = queues_.upper_bound(last_served_);
      for (std::size_t step = 0; step <= queues_.size() && !have; ++step) {
        if (it == queues_.end()) it = queues_.begin();
        if (it == queues_.end()) break;
        if (!it->second.empty()) {
          item = std::move(it->second.front());
          it->second.pop_front();
          last_served_ = it->first;
          have = true;
        } else {
          ++it;
        }
      }
      if (!have && stopping_) return;
    }
    if (!have) continue;

    IngestResult result;
    {
      std::lock_guard lock(manager_mutex_);
      try {
        result = manager_.ingest_keyframe(item.kf, item.label);
      } catch (const Error&) {
        std::lock_guard stats_lock(stats_mutex_);
        ++protocol_errors_;
      }
    }
    {
      std::lock_guard lock(stats_mutex_);
      if (result.stats.candidates_queried > 0) bow_stats_.add(result.stats.bow_ms);
      if (result.stats.candidates_verified > 0) {
        matching_stats_.add(result.stats.matching_ms);
        prefilter_stats_.add(result.stats.prefilter_ms);
        ransac_stats_.add(result.stats.ransac_ms);
        covariance_stats_.add(result.stats.covariance_ms);
      }
      if (!result.events.empty()) {
        pgo_stats_.add(result.stats.pgo_ms);
        loop_latency_.add(result.stats.matching_ms + result.stats.prefilter_ms +
                          result.stats.ransac_ms + result.stats.covariance_ms +
                          result.stats.pgo_ms);
      }
    }
    {
      std::lock_guard lock(queue_mutex_);
      ++processed_;
    }
  }
}

bool Server::drained() const {
  std::lock_guard lock(queue_mutex_);
  return processed_ == enqueued_;
}

Server::Totals Server::totals() const {
  Totals t;
  {
    std::lock_guard lock(manager_mutex_);
    t.agents = manager_.num_agents();
    t.maps = manager_.num_maps();
    t.loops_detected = manager_.loops_detected();
    t.loops_accepted = manager_.loops_accepted();
    t.loops_rejected = manager_.loops_rejected();
    t.fusions = manager_.fusion_count();
  }
  {
    std::lock_guard lock(queue_mutex_);
    t.keyframes_processed = processed_;
    t.keyframes_dropped = dropped_;
  }
  {
    std::lock_guard lock(stats_mutex_);
    t.protocol_errors = protocol_errors_;
    t.sessions_opened = sessions_opened_;
    t.sessions_rejected = sessions_rejected_;
  }
  return t;
}

std::string Server::status_text() const {
  std::ostringstream out;
  out.precision(6);
  const Totals t = totals();
  out << "agents " << t.agents << "\n";
  out << "maps " << t.maps << "\n";
  out << "keyframes_processed " << t.keyframes_processed << "\n";
  out << "keyframes_dropped " << t.keyframes_dropped << "\n";
  out << "protocol_errors " << t.protocol_errors << "\n";
  out << "sessions_opened " << t.sessions_opened << "\n";
  out << "sessions_rejected " << t.sessions_rejected << "\n";
  out << "loops_detected " << t.loops_detected << "\n";
  out << "loops_accepted " << t.loops_accepted << "\n";
  out << "loops_rejected " << t.loops_rejected << "\n";
  out << "fusions " << t.fusions << "\n";
  out << "drained " << (drained() ? 1 : 0) << "\n";

  {
    std::lock_guard lock(manager_mutex_);
    for (int map_id : manager_.map_ids()) {
      out << "map." << map_id << ".keyframes " << manager_.map(map_id).num_nodes() << "\n";
    }
  }
  {
    std::lock_guard lock(stats_mutex_);
    const double now = mono_seconds();
    for (std::uint32_t agent : traffic_.agents()) {
      const auto a = traffic_.agent(agent, now);
      out << "agent." << agent << ".messages " << a.total_messages << "\n";
      out << "agent." << agent << ".bytes " << a.total_bytes << "\n";
      out << "agent." << agent << ".rate_kbs " << a.rate_kbs << "\n";
    }
    const auto stage = [&out](const char* name, const LatencyStats& stats) {
      const auto s = stats.summarize();
      out << "stage." << name << ".count " << s.count << "\n";
      if (s.count > 0) {
        out << "stage." << name << ".mean_ms " << s.mean_ms << "\n";
        out << "stage." << name << ".p50_ms " << s.p50_ms << "\n";
        out << "stage." << name << ".p90_ms " << s.p90_ms << "\n";
        out << "stage." << name << ".max_ms " << s.max_ms << "\n";
      }
    };
    stage("decode", decode_stats_);
    stage("bow", bow_stats_);
    stage("matching", matching_stats_);
    stage("prefilter", prefilter_stats_);
    stage("ransac", ransac_stats_);
    stage("covariance", covariance_stats_);
    stage("pgo", pgo_stats_);
    stage("loop_total", loop_latency_);
  }
  return out.str();
}

void Server::write_exports() const {
  if (config_.export_dir.empty()) return;
  const std::string status = status_text();
  std::lock_guard lock(manager_mutex_);
  manager_.export_trajectories(config_.export_dir);
  manager_.export_loop_log(config_.export_dir + "/loops.csv");
  std::ofstream stats(config_.export_dir + "/stats.txt");
  if (stats) stats << status;
}

}  // namespace cslam
