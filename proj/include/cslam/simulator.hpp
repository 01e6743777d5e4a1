#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cslam/geometry.hpp"
#include "cslam/keyframe.hpp"
#include "cslam/wire.hpp"

namespace cslam {

// Synthetic front-end: ground-truth trajectories over a shared landmark
// field, drifting odometry, motion-based keyframe selection, and wire-format
// message streams. Everything is deterministic under the scenario seed.

struct TrajectorySpec {
  enum class Kind { Circle, FigureEight, Polyline };
  Kind kind = Kind::FigureEight;
  Eigen::Vector3d center{0.0, 0.0, 1.2};
  double radius = 4.0;  // circle
  double a = 6.0;       // figure-eight x half-span
  double b = 3.0;       // figure-eight y half-span
  std::vector<Eigen::Vector3d> waypoints;  // polyline (closed)
  double speed = 1.0;   // m/s
  double phase = 0.0;   // start offset along the path, [0, 1)
  // Slow circular wander of the whole path: successive laps are laterally
  // offset instead of retracing exactly, as with any real platform.
  double wander_radius = 0.0;  // meters
  double wander_period_s = 40.0;
};

// Per-agent front-end emulation profile. The "tracking-camera" profile of a
// self-contained odometry sensor is just a different parameterization: only
// poses and keypoints ever reach the wire.
struct AgentProfile {
  std::string label = "default";
  double drift_per_m = 0.005;          // translation drift per meter traveled
  double drift_jitter = 0.1;           // gaussian jitter, fraction of the drift step
  double rot_drift_deg_per_m = 0.05;   // heading drift per meter traveled
  double keypoint_sigma_px = 0.5;
  double descriptor_flip_prob = 0.02;
};

struct Scenario {
  std::uint64_t seed = 1;
  double duration_s = 90.0;
  double odom_rate_hz = 10.0;
  double kf_trans_thresh_m = 0.3;
  double kf_rot_thresh_deg = 10.0;
  int landmark_count = 1500;
  Eigen::Vector3d landmark_min{-12.0, -9.0, -1.5};
  Eigen::Vector3d landmark_max{12.0, 9.0, 4.5};
  double min_range = 0.5;
  double max_range = 15.0;
  int max_keypoints_per_kf = 400;
  CameraIntrinsics camera{380.0, 380.0, 320.0, 240.0, 640, 480};
  std::vector<TrajectorySpec> trajectories;  // one per agent
  std::vector<AgentProfile> profiles;        // one per agent

  // Throws InvalidScenario naming the offending field.
  void validate() const;

  static Scenario load(const std::string& path);
  void save(const std::string& path) const;
};

// Overlapping figure-eights around a shared area; agent 0 centered, later
// agents offset and phase-shifted but co-visible.
Scenario default_scenario(int n_agents, std::uint64_t seed = 1);

// Local features match only under limited viewpoint and scale change.
// Observations are therefore keyed by (landmark, viewpoint cell): the cell
// quantizes the landmark-to-camera direction (60-degree azimuth bins, 3
// elevation bins) and the log2 distance in sqrt(2) bands. Two observations
// of one landmark produce matching descriptors iff their cells agree.
std::uint32_t viewpoint_cell(const Eigen::Vector3d& landmark, const Eigen::Vector3d& camera_pos);

// Deterministic 256-bit identity of one (landmark, cell) observation class.
std::vector<std::uint8_t> observation_descriptor(std::uint64_t scenario_seed,
                                                 std::int32_t landmark_id, std::uint32_t cell);

struct GroundTruthKeyframe {
  KfId id;
  std::uint64_t timestamp_ns = 0;
  Pose T_ws_true;
  Pose T_ws_odom;
  std::vector<std::int32_t> landmark_ids;  // aligned with emitted keypoints
  std::vector<std::uint32_t> viewpoint_cells;
};

struct GroundTruthLog {
  // Agents share one world frame (true inter-agent transforms are identity).
  std::unordered_map<std::uint32_t, std::vector<GroundTruthKeyframe>> per_agent;

  void save_tum(const std::string& dir) const;  // "<dir>/gt_agent_<id>.tum"
};

struct AgentStream {
  std::uint32_t agent_id = 0;
  std::string label;
  std::vector<std::uint8_t> bytes;  // hello frame + keyframe frames
  std::vector<KeyframeMessage> messages;
  double path_length_m = 0.0;
};

struct SimResult {
  std::vector<AgentStream> streams;
  GroundTruthLog ground_truth;
};

SimResult generate(const Scenario& scenario);

// Deterministic sample of descriptors from the generated streams, used to
// train a vocabulary without external data.
std::vector<std::vector<std::uint8_t>> collect_descriptor_corpus(const SimResult& sim,
                                                                 int max_count,
                                                                 std::uint64_t seed);

void save_stream(const AgentStream& stream, const std::string& path);
std::vector<std::uint8_t> load_stream_bytes(const std::string& path);

struct PlayReport {
  bool completed = false;
  int frames_sent = 0;
  std::uint64_t bytes_sent = 0;
  double wall_time_s = 0.0;
  std::string error;
};

// Replays a recorded stream to the server. Frame timing follows the encoded
// keyframe timestamps scaled by realtime_factor (0 = as fast as possible).
// A lost connection returns a partial report instead of throwing.
PlayReport play_stream(const std::vector<std::uint8_t>& stream_bytes, const std::string& host,
                       int port, double realtime_factor);

}  // namespace cslam
