#include "cslam/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "cslam/errors.hpp"
#include "cslam/rng.hpp"
#include "net_util.hpp"

namespace cslam {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Position on the analytic path at parameter u (angle for the closed curves,
// arc length for polylines).
Eigen::Vector3d path_point(const TrajectorySpec& spec, double u) {
  switch (spec.kind) {
    case TrajectorySpec::Kind::Circle:
      return spec.center +
             Eigen::Vector3d(spec.radius * std::cos(u), spec.radius * std::sin(u), 0.0);
    case TrajectorySpec::Kind::FigureEight:
      return spec.center +
             Eigen::Vector3d(spec.a * std::sin(u), spec.b * std::sin(u) * std::cos(u), 0.0);
    case TrajectorySpec::Kind::Polyline: {
      double total = 0.0;
      std::vector<double> lens(spec.waypoints.size());
      for (std::size_t i = 0; i < spec.waypoints.size(); ++i) {
        lens[i] = (spec.waypoints[(i + 1) % spec.waypoints.size()] - spec.waypoints[i]).norm();
        total += lens[i];
      }
      double s = std::fmod(u, total);
      if (s < 0.0) s += total;
      for (std::size_t i = 0; i < spec.waypoints.size(); ++i) {
        if (s <= lens[i] || i + 1 == spec.waypoints.size()) {
          const auto& a = spec.waypoints[i];
          const auto& b = spec.waypoints[(i + 1) % spec.waypoints.size()];
          const double f = lens[i] > 0.0 ? std::min(1.0, s / lens[i]) : 0.0;
          return a + f * (b - a);
        }
        s -= lens[i];
      }
      return spec.waypoints.front();
    }
  }
  return spec.center;
}

double path_period(const TrajectorySpec& spec) {
  if (spec.kind == TrajectorySpec::Kind::Polyline) {
    double total = 0.0;
    for (std::size_t i = 0; i < spec.waypoints.size(); ++i) {
      total += (spec.waypoints[(i + 1) % spec.waypoints.size()] - spec.waypoints[i]).norm();
    }
    return total;
  }
  return 2.0 * std::numbers::pi;
}

// Camera pose looking along the direction of travel: optical x right,
// y down, z forward; world z up.
Pose camera_pose(const Eigen::Vector3d& position, const Eigen::Vector3d& velocity,
                 const Pose& previous) {
  const double vn = velocity.norm();
  if (vn < 1e-9) {
    Pose keep = previous;
    keep.p = position;
    return keep;
  }
  const Eigen::Vector3d forward = velocity / vn;
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-6) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d R;
  R.col(0) = right;
  R.col(1) = down;
  R.col(2) = forward;
  return Pose(Eigen::Quaterniond(R), position);
}

}  // namespace

std::uint32_t viewpoint_cell(const Eigen::Vector3d& landmark, const Eigen::Vector3d& camera_pos) {
  const Eigen::Vector3d v = camera_pos - landmark;
  const double d = std::max(v.norm(), 1e-3);
  const double az = std::atan2(v.y(), v.x());  // [-pi, pi]
  int az_bin = static_cast<int>(std::floor((az + std::numbers::pi) / (std::numbers::pi / 3.0)));
  az_bin = std::clamp(az_bin, 0, 5);
  const double el = std::asin(std::clamp(v.z() / d, -1.0, 1.0));
  const int el_bin = el < -20.0 * kDegToRad ? 0 : (el > 20.0 * kDegToRad ? 2 : 1);
  int band = static_cast<int>(std::floor(2.0 * std::log2(d / 0.5)));
  band = std::clamp(band, 0, 31);
  return static_cast<std::uint32_t>(az_bin + 6 * el_bin + 18 * band);
}

std::vector<std::uint8_t> observation_descriptor(std::uint64_t scenario_seed,
                                                 std::int32_t landmark_id, std::uint32_t cell) {
  Rng rng(scenario_seed ^ (static_cast<std::uint64_t>(landmark_id) * 0x9e3779b97f4a7c15ULL) ^
          (static_cast<std::uint64_t>(cell) * 0xc2b2ae3d27d4eb4fULL));
  std::vector<std::uint8_t> d(kBinary256Bytes);
  for (auto& b : d) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
  return d;
}

void Scenario::validate() const {
  if (trajectories.empty()) throw InvalidScenario("scenario has no agents (trajectories empty)");
  if (profiles.size() != trajectories.size()) {
    throw InvalidScenario("profiles count must equal trajectories count");
  }
  if (duration_s <= 0.0) throw InvalidScenario("duration_s must be positive");
  if (odom_rate_hz <= 0.0) throw InvalidScenario("odom_rate_hz must be positive");
  if (kf_trans_thresh_m <= 0.0) throw InvalidScenario("kf_trans_thresh_m must be positive");
  if (kf_rot_thresh_deg <= 0.0) throw InvalidScenario("kf_rot_thresh_deg must be positive");
  if (landmark_count < 1) throw InvalidScenario("landmark_count must be >= 1");
  if (landmark_count > 1000000) throw InvalidScenario("landmark_count too large");
  if (!(camera.fx > 0.0) || !(camera.fy > 0.0)) throw InvalidScenario("camera focal length");
  if (camera.width == 0 || camera.height == 0) throw InvalidScenario("camera size");
  if (min_range <= 0.0 || max_range <= min_range) throw InvalidScenario("range interval");
  if ((landmark_max - landmark_min).minCoeff() <= 0.0) throw InvalidScenario("landmark box");
  if (max_keypoints_per_kf < 8 || max_keypoints_per_kf > 65535) {
    throw InvalidScenario("max_keypoints_per_kf out of range");
  }
  for (const auto& t : trajectories) {
    if (t.speed <= 0.0) throw InvalidScenario("trajectory speed must be positive");
    if (t.kind == TrajectorySpec::Kind::Circle && t.radius <= 0.0) {
      throw InvalidScenario("circle radius must be positive");
    }
    if (t.kind == TrajectorySpec::Kind::FigureEight && (t.a <= 0.0 || t.b <= 0.0)) {
      throw InvalidScenario("figure-eight spans must be positive");
    }
    if (t.kind == TrajectorySpec::Kind::Polyline && t.waypoints.size() < 2) {
      throw InvalidScenario("polyline needs >= 2 waypoints");
    }
  }
  for (const auto& p : profiles) {
    if (p.drift_per_m < 0.0 || p.keypoint_sigma_px < 0.0) {
      throw InvalidScenario("profile noise values must be nonnegative");
    }
    if (p.descriptor_flip_prob < 0.0 || p.descriptor_flip_prob > 0.5) {
      throw InvalidScenario("descriptor_flip_prob must be in [0, 0.5]");
    }
  }
}

Scenario default_scenario(int n_agents, std::uint64_t seed) {
  Scenario s;
  s.seed = seed;
  for (int a = 0; a < n_agents; ++a) {
    TrajectorySpec t;
    t.kind = TrajectorySpec::Kind::FigureEight;
    t.a = 6.0 - 0.4 * a;
    t.b = 3.0 + 0.3 * a;
    t.center = Eigen::Vector3d(0.3 * a, 0.4 * a, 1.2 + 0.15 * a);
    t.speed = 1.0 + 0.1 * a;
    t.phase = 0.23 * a;
    t.wander_radius = 0.45;
    t.wander_period_s = 41.0 + 3.0 * a;
    s.trajectories.push_back(t);
    AgentProfile p;
    p.drift_per_m = 0.005;
    s.profiles.push_back(p);
  }
  return s;
}

SimResult generate(const Scenario& scenario) {
  scenario.validate();
  SimResult out;
  Rng master(scenario.seed);
  Rng landmark_rng = master.fork(1);

  // Landmark field; observation descriptors are derived per (landmark,
  // viewpoint cell) when emitted.
  std::vector<Eigen::Vector3d> landmarks(scenario.landmark_count);
  for (int i = 0; i < scenario.landmark_count; ++i) {
    for (int d = 0; d < 3; ++d) {
      landmarks[i][d] = landmark_rng.uniform(scenario.landmark_min[d], scenario.landmark_max[d]);
    }
  }

  const double dt = 1.0 / scenario.odom_rate_hz;
  const int steps = static_cast<int>(scenario.duration_s * scenario.odom_rate_hz);

  for (std::size_t agent = 0; agent < scenario.trajectories.size(); ++agent) {
    const TrajectorySpec& traj = scenario.trajectories[agent];
    const AgentProfile& profile = scenario.profiles[agent];
    Rng rng = master.fork(1000 + agent);

    AgentStream stream;
    stream.agent_id = static_cast<std::uint32_t>(agent);
    stream.label = profile.label;
    {
      HelloMessage hello;
      hello.agent_id = stream.agent_id;
      hello.front_end_label = profile.label;
      const auto frame = encode_hello(hello);
      stream.bytes.insert(stream.bytes.end(), frame.begin(), frame.end());
    }

    // Accumulating drift, applied on the right of the true pose:
    //   odom = gt * D, so |odom.p - gt.p| = |D.p|.
    const Eigen::Vector3d drift_dir = rng.unit_vec3();
    const Eigen::Vector3d drift_axis = rng.unit_vec3();
    Pose drift;

    double u = traj.phase * path_period(traj);
    Pose gt_prev;
    Pose cam_prev;
    bool have_prev = false;
    Pose last_kf_odom;
    bool have_kf = false;
    std::uint64_t kf_seq = 0;

    auto& gt_entries = out.ground_truth.per_agent[stream.agent_id];

    for (int k = 0; k <= steps; ++k) {
      // Advance the path parameter at constant linear speed.
      if (k > 0) {
        const double h = 1e-5;
        const Eigen::Vector3d dp = path_point(traj, u + h) - path_point(traj, u - h);
        const double speed_du = dp.norm() / (2.0 * h);
        u += traj.speed * dt / std::max(speed_du, 1e-6);
      }
      Eigen::Vector3d position = path_point(traj, u);
      const double h = 1e-5;
      const Eigen::Vector3d velocity =
          (path_point(traj, u + h) - path_point(traj, u - h)) / (2.0 * h);
      if (traj.wander_radius > 0.0) {
        const double w = 2.0 * std::numbers::pi * (k * dt) / traj.wander_period_s;
        position += traj.wander_radius * Eigen::Vector3d(std::cos(w), std::sin(w), 0.0);
      }
      const Pose gt = camera_pose(position, velocity, cam_prev);
      cam_prev = gt;

      // Drift accumulates with distance traveled.
      if (have_prev) {
        const double ds = (gt.p - gt_prev.p).norm();
        stream.path_length_m += ds;
        const Eigen::Vector3d step = profile.drift_per_m * ds * drift_dir +
                                     rng.gaussian_vec3(profile.drift_jitter *
                                                       profile.drift_per_m * ds);
        drift.p += step;
        drift.q = drift.q * exp_so3(profile.rot_drift_deg_per_m * kDegToRad * ds * drift_axis);
        drift.normalize();
      }
      gt_prev = gt;
      have_prev = true;
      const Pose odom = compose(gt, drift);

      // Motion-based keyframe selection on the odometry estimate.
      if (have_kf) {
        const double dist = (odom.p - last_kf_odom.p).norm();
        const double angle = rotation_distance(odom, last_kf_odom);
        if (dist < scenario.kf_trans_thresh_m && angle < scenario.kf_rot_thresh_deg * kDegToRad) {
          continue;
        }
      }
      last_kf_odom = odom;
      have_kf = true;

      // Project visible landmarks from the true pose.
      KeyframeMessage msg;
      msg.agent_id = stream.agent_id;
      msg.kf_seq = kf_seq;
      msg.timestamp_ns = static_cast<std::uint64_t>(k * dt * 1e9);
      msg.T_ws_odom = odom;
      msg.camera = scenario.camera;
      GroundTruthKeyframe gt_entry;
      gt_entry.id = {stream.agent_id, kf_seq};
      gt_entry.timestamp_ns = msg.timestamp_ns;
      gt_entry.T_ws_true = gt;
      gt_entry.T_ws_odom = odom;

      const Pose world_in_cam = inverse(gt);
      for (int lm = 0; lm < scenario.landmark_count; ++lm) {
        if (static_cast<int>(msg.keypoints.size()) >= scenario.max_keypoints_per_kf) break;
        const Eigen::Vector3d X = world_in_cam.apply(landmarks[lm]);
        const double range = X.norm();
        if (X.z() <= 0.0 || range < scenario.min_range || range > scenario.max_range) continue;
        const Eigen::Vector2d px = ray_to_pixel(X, scenario.camera);
        const double u_noisy = px.x() + rng.gaussian(profile.keypoint_sigma_px);
        const double v_noisy = px.y() + rng.gaussian(profile.keypoint_sigma_px);
        if (u_noisy < 0.0 || v_noisy < 0.0 || u_noisy >= scenario.camera.width ||
            v_noisy >= scenario.camera.height) {
          continue;
        }
        msg.keypoints.emplace_back(static_cast<float>(u_noisy), static_cast<float>(v_noisy));
        gt_entry.landmark_ids.push_back(lm);
        const std::uint32_t cell = viewpoint_cell(landmarks[lm], gt.p);
        gt_entry.viewpoint_cells.push_back(cell);
        // Observation identity with i.i.d. bit flips.
        std::vector<std::uint8_t> desc = observation_descriptor(scenario.seed, lm, cell);
        if (profile.descriptor_flip_prob > 0.0) {
          for (int bit = 0; bit < kBinary256Bytes * 8; ++bit) {
            if (rng.uniform() < profile.descriptor_flip_prob) {
              desc[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
            }
          }
        }
        msg.descriptors.insert(msg.descriptors.end(), desc.begin(), desc.end());
      }

      const auto frame = encode_kf(msg);
      stream.bytes.insert(stream.bytes.end(), frame.begin(), frame.end());
      stream.messages.push_back(std::move(msg));
      gt_entries.push_back(std::move(gt_entry));
      ++kf_seq;
    }
    out.streams.push_back(std::move(stream));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> collect_descriptor_corpus(const SimResult& sim,
                                                                 int max_count,
                                                                 std::uint64_t seed) {
  std::vector<std::vector<std::uint8_t>> corpus;
  Rng rng(seed);
  std::size_t total = 0;
  for (const auto& stream : sim.streams) {
    for (const auto& msg : stream.messages) total += msg.keypoints.size();
  }
  const double keep = total == 0 ? 0.0 : std::min(1.0, static_cast<double>(max_count) / total);
  for (const auto& stream : sim.streams) {
    for (const auto& msg : stream.messages) {
      const int n = static_cast<int>(msg.keypoints.size());
      for (int i = 0; i < n; ++i) {
        if (rng.uniform() > keep) continue;
        const auto* begin = msg.descriptors.data() + static_cast<std::size_t>(i) * msg.descriptor_len;
        corpus.emplace_back(begin, begin + msg.descriptor_len);
        if (static_cast<int>(corpus.size()) >= max_count) return corpus;
      }
    }
  }
  return corpus;
}

void GroundTruthLog::save_tum(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [agent, entries] : per_agent) {
    std::ofstream out(dir + "/gt_agent_" + std::to_string(agent) + ".tum");
    if (!out) throw TrajectoryIoError("cannot write ground truth in " + dir);
    out.precision(17);
    for (const auto& e : entries) {
      const double t = static_cast<double>(e.timestamp_ns) * 1e-9;
      out << t << " " << e.T_ws_true.p.x() << " " << e.T_ws_true.p.y() << " "
          << e.T_ws_true.p.z() << " " << e.T_ws_true.q.x() << " " << e.T_ws_true.q.y() << " "
          << e.T_ws_true.q.z() << " " << e.T_ws_true.q.w() << "\n";
    }
  }
}

void save_stream(const AgentStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrajectoryIoError("cannot write stream log: " + path);
  out.write(reinterpret_cast<const char*>(stream.bytes.data()),
            static_cast<std::streamsize>(stream.bytes.size()));
}

std::vector<std::uint8_t> load_stream_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrajectoryIoError("cannot open stream log: " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

PlayReport play_stream(const std::vector<std::uint8_t>& stream_bytes, const std::string& host,
                       int port, double realtime_factor) {
  PlayReport report;
  const auto t_start = std::chrono::steady_clock::now();

  net::Socket socket = net::connect_tcp(host, port);
  if (!socket.valid()) {
    report.error = "connect failed: " + host + ":" + std::to_string(port);
    return report;
  }

  // Split the log into frames to honor the recorded keyframe timing.
  FrameReader reader;
  reader.feed(stream_bytes.data(), stream_bytes.size());
  std::vector<std::pair<std::size_t, std::size_t>> frames;  // offset, length incl prefix
  std::vector<std::uint64_t> timestamps;
  {
    std::size_t offset = 0;
    std::vector<std::uint8_t> payload;
    while (reader.next(payload)) {
      frames.emplace_back(offset, payload.size() + 4);
      offset += payload.size() + 4;
      std::uint64_t ts = 0;
      const DecodeResult decoded = decode_frame(payload);
      if (const auto* kf = std::get_if<KeyframeMessage>(&decoded)) ts = kf->timestamp_ns;
      timestamps.push_back(ts);
    }
  }

  std::uint64_t prev_ts = 0;
  bool have_ts = false;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (realtime_factor > 0.0 && timestamps[i] > 0) {
      if (have_ts && timestamps[i] > prev_ts) {
        const double sleep_s = (timestamps[i] - prev_ts) * 1e-9 * realtime_factor;
        std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
      }
      prev_ts = timestamps[i];
      have_ts = true;
    }
    if (!net::send_all(socket.fd, stream_bytes.data() + frames[i].first, frames[i].second)) {
      report.error = "connection lost mid-stream";
      report.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      return report;
    }
    ++report.frames_sent;
    report.bytes_sent += frames[i].second;
  }
  report.completed = true;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Scenario file format: the same key-value style the server config uses.

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const char* kind_name(TrajectorySpec::Kind kind) {
  switch (kind) {
    case TrajectorySpec::Kind::Circle: return "circle";
    case TrajectorySpec::Kind::FigureEight: return "figure8";
    case TrajectorySpec::Kind::Polyline: return "polyline";
  }
  return "?";
}

}  // namespace

Scenario Scenario::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidScenario("cannot open scenario file: " + path);
  Scenario s;
  s.trajectories.clear();
  s.profiles.clear();
  int agent_count = 0;
  bool saw_version = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidScenario("scenario line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream ss(value);
    const auto want = [&](auto& v) {
      if (!(ss >> v)) throw InvalidScenario("bad value for '" + key + "'");
    };
    if (key == "scenario_version") {
      int v;
      want(v);
      if (v != 1) throw InvalidScenario("unsupported scenario_version");
      saw_version = true;
    } else if (key == "seed") {
      want(s.seed);
    } else if (key == "duration_s") {
      want(s.duration_s);
    } else if (key == "odom_rate_hz") {
      want(s.odom_rate_hz);
    } else if (key == "kf_trans_thresh_m") {
      want(s.kf_trans_thresh_m);
    } else if (key == "kf_rot_thresh_deg") {
      want(s.kf_rot_thresh_deg);
    } else if (key == "landmark_count") {
      want(s.landmark_count);
    } else if (key == "landmark_box") {
      for (int d = 0; d < 3; ++d) want(s.landmark_min[d]);
      for (int d = 0; d < 3; ++d) want(s.landmark_max[d]);
    } else if (key == "min_range") {
      want(s.min_range);
    } else if (key == "max_range") {
      want(s.max_range);
    } else if (key == "max_keypoints_per_kf") {
      want(s.max_keypoints_per_kf);
    } else if (key == "camera") {
      want(s.camera.fx);
      want(s.camera.fy);
      want(s.camera.cx);
      want(s.camera.cy);
      want(s.camera.width);
      want(s.camera.height);
    } else if (key == "agent_count") {
      want(agent_count);
      if (agent_count < 1 || agent_count > 64) throw InvalidScenario("agent_count out of range");
      s.trajectories.resize(agent_count);
      s.profiles.resize(agent_count);
    } else if (key.starts_with("agent")) {
      const auto dot = key.find('.');
      if (dot == std::string::npos) throw InvalidScenario("unknown scenario key '" + key + "'");
      const int idx = std::stoi(key.substr(5, dot - 5));
      if (idx < 0 || idx >= agent_count) {
        throw InvalidScenario("agent index out of range in '" + key + "' (set agent_count first)");
      }
      const std::string field = key.substr(dot + 1);
      TrajectorySpec& t = s.trajectories[idx];
      AgentProfile& p = s.profiles[idx];
      if (field == "trajectory") {
        std::string kind;
        want(kind);
        if (kind == "circle") {
          t.kind = TrajectorySpec::Kind::Circle;
          for (int d = 0; d < 3; ++d) want(t.center[d]);
          want(t.radius);
          want(t.speed);
          want(t.phase);
        } else if (kind == "figure8") {
          t.kind = TrajectorySpec::Kind::FigureEight;
          for (int d = 0; d < 3; ++d) want(t.center[d]);
          want(t.a);
          want(t.b);
          want(t.speed);
          want(t.phase);
        } else if (kind == "polyline") {
          t.kind = TrajectorySpec::Kind::Polyline;
          want(t.speed);
          want(t.phase);
          t.waypoints.clear();
          Eigen::Vector3d w;
          while (ss >> w.x() >> w.y() >> w.z()) t.waypoints.push_back(w);
        } else {
          throw InvalidScenario("unknown trajectory kind '" + kind + "'");
        }
      } else if (field == "wander") {
        want(t.wander_radius);
        want(t.wander_period_s);
      } else if (field == "label") {
        want(p.label);
      } else if (field == "drift_per_m") {
        want(p.drift_per_m);
      } else if (field == "drift_jitter") {
        want(p.drift_jitter);
      } else if (field == "rot_drift_deg_per_m") {
        want(p.rot_drift_deg_per_m);
      } else if (field == "keypoint_sigma_px") {
        want(p.keypoint_sigma_px);
      } else if (field == "descriptor_flip_prob") {
        want(p.descriptor_flip_prob);
      } else {
        throw InvalidScenario("unknown agent field '" + field + "'");
      }
    } else {
      throw InvalidScenario("unknown scenario key '" + key + "'");
    }
  }
  if (!saw_version) throw InvalidScenario("scenario file missing scenario_version");
  s.validate();
  return s;
}

void Scenario::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidScenario("cannot write scenario file: " + path);
  out.precision(17);
  out << "scenario_version = 1\n";
  out << "seed = " << seed << "\n";
  out << "duration_s = " << duration_s << "\n";
  out << "odom_rate_hz = " << odom_rate_hz << "\n";
  out << "kf_trans_thresh_m = " << kf_trans_thresh_m << "\n";
  out << "kf_rot_thresh_deg = " << kf_rot_thresh_deg << "\n";
  out << "landmark_count = " << landmark_count << "\n";
  out << "landmark_box = " << landmark_min.x() << " " << landmark_min.y() << " "
      << landmark_min.z() << "  " << landmark_max.x() << " " << landmark_max.y() << " "
      << landmark_max.z() << "\n";
  out << "min_range = " << min_range << "\n";
  out << "max_range = " << max_range << "\n";
  out << "max_keypoints_per_kf = " << max_keypoints_per_kf << "\n";
  out << "camera = " << camera.fx << " " << camera.fy << " " << camera.cx << " " << camera.cy
      << " " << camera.width << " " << camera.height << "\n";
  out << "agent_count = " << trajectories.size() << "\n";
  for (std::size_t a = 0; a < trajectories.size(); ++a) {
    const TrajectorySpec& t = trajectories[a];
    const AgentProfile& p = profiles[a];
    out << "agent" << a << ".trajectory = " << kind_name(t.kind);
    if (t.kind == TrajectorySpec::Kind::Circle) {
      out << " " << t.center.x() << " " << t.center.y() << " " << t.center.z() << " " << t.radius
          << " " << t.speed << " " << t.phase;
    } else if (t.kind == TrajectorySpec::Kind::FigureEight) {
      out << " " << t.center.x() << " " << t.center.y() << " " << t.center.z() << " " << t.a
          << " " << t.b << " " << t.speed << " " << t.phase;
    } else {
      out << " " << t.speed << " " << t.phase;
      for (const auto& w : t.waypoints) out << " " << w.x() << " " << w.y() << " " << w.z();
    }
    out << "\n";
    out << "agent" << a << ".wander = " << t.wander_radius << " " << t.wander_period_s << "\n";
    out << "agent" << a << ".label = " << p.label << "\n";
    out << "agent" << a << ".drift_per_m = " << p.drift_per_m << "\n";
    out << "agent" << a << ".drift_jitter = " << p.drift_jitter << "\n";
    out << "agent" << a << ".rot_drift_deg_per_m = " << p.rot_drift_deg_per_m << "\n";
    out << "agent" << a << ".keypoint_sigma_px = " << p.keypoint_sigma_px << "\n";
    out << "agent" << a << ".descriptor_flip_prob = " << p.descriptor_flip_prob << "\n";
  }
}

}  // namespace cslam
