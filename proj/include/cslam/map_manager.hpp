#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cslam/bow.hpp"
#include "cslam/config.hpp"
#include "cslam/keyframe.hpp"
#include "cslam/pose_graph.hpp"
#include "cslam/relative_pose.hpp"

namespace cslam {

struct ManagerEvent {
  enum class Kind { LoopClosed, MapsFused };
  Kind kind = Kind::LoopClosed;
  LoopConstraint constraint;
  int map_id = 0;           // map the constraint landed in (after fusion)
  int absorbed_map_id = 0;  // MapsFused only
  OptimizeReport pgo;
};

struct IngestStats {
  int candidates_queried = 0;
  int candidates_verified = 0;
  double bow_ms = 0.0;
  double matching_ms = 0.0;
  double prefilter_ms = 0.0;
  double ransac_ms = 0.0;
  double covariance_ms = 0.0;
  double pgo_ms = 0.0;
};

struct IngestResult {
  std::vector<ManagerEvent> events;
  IngestStats stats;
};

enum class ApplyLoopResult { Applied, RateLimited, Duplicate };

struct LoopRecord {
  LoopConstraint constraint;
  std::uint64_t wall_time_ns = 0;
  bool fused_maps = false;
};

// Owns every map and the place-recognition database; runs the per-keyframe
// pipeline (graph insert, BoW insert + query, geometric verification, loop
// application or map fusion, PGO). One logical authority: callers serialize
// ingest_keyframe invocations.
class MapManager {
 public:
  MapManager(const ServerConfig& config, std::shared_ptr<const Vocabulary> vocabulary);

  // Full pipeline for one decoded keyframe. The front-end label (from the
  // agent's hello) selects odometry edge weights.
  IngestResult ingest_keyframe(const Keyframe& kf, const std::string& front_end_label = "default");

  // Adds a verified intra-map loop edge and runs PGO. Rate limiting and
  // duplicate pairs report back without touching the graph.
  ApplyLoopResult apply_loop(const LoopConstraint& constraint, OptimizeReport* report = nullptr);

  // Merges the two maps the constraint spans (reference = older map),
  // transforming the absorbed map into the reference frame. Returns the
  // reference map id. Throws SameMap if both keyframes share a map.
  int fuse_maps(const LoopConstraint& constraint, OptimizeReport* report = nullptr);

  int num_maps() const { return static_cast<int>(maps_.size()); }
  int num_agents() const { return static_cast<int>(agent_to_map_.size()); }
  int fusion_count() const { return fusion_count_; }
  bool has_agent(std::uint32_t agent) const { return agent_to_map_.contains(agent); }
  const MapGraph& map_of_agent(std::uint32_t agent) const;
  MapGraph& map_of_agent(std::uint32_t agent);
  std::vector<int> map_ids() const;
  const MapGraph& map(int map_id) const;
  const KeyframeStore& keyframes() const { return keyframes_; }
  const std::vector<LoopRecord>& loop_log() const { return loop_log_; }
  const KeyframeDatabase& database() const { return database_; }

  int loops_detected() const { return loops_detected_; }
  int loops_accepted() const { return loops_accepted_; }
  int loops_rejected() const { return loops_rejected_; }
  int loops_rate_limited() const { return loops_rate_limited_; }

  // TUM-format trajectory per agent ("<dir>/agent_<id>.tum") plus the loop
  // log CSV ("<dir>/loops.csv").
  void export_trajectories(const std::string& dir) const;
  void export_loop_log(const std::string& path) const;

 private:
  int map_id_of_kf(const KfId& id) const;
  std::uint64_t verification_seed(const KfId& query, const KfId& candidate) const;
  void log_loop(const LoopConstraint& constraint, bool fused);

  ServerConfig config_;
  std::shared_ptr<const Vocabulary> vocabulary_;
  KeyframeDatabase database_;
  KeyframeStore keyframes_;
  std::unordered_map<int, MapGraph> maps_;
  std::unordered_map<std::uint32_t, int> agent_to_map_;
  std::unordered_map<std::uint32_t, std::string> agent_labels_;
  std::unordered_map<std::uint32_t, std::uint64_t> last_loop_seq_;
  std::vector<LoopRecord> loop_log_;
  int next_map_id_ = 0;
  int fusion_count_ = 0;
  int loops_detected_ = 0;
  int loops_accepted_ = 0;
  int loops_rejected_ = 0;
  int loops_rate_limited_ = 0;
};

}  // namespace cslam
