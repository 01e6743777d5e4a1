#include "cslam/map_manager.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cslam/errors.hpp"
#include "cslam/matching.hpp"

namespace cslam {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::uint64_t wall_ns() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

}  // namespace

MapManager::MapManager(const ServerConfig& config, std::shared_ptr<const Vocabulary> vocabulary)
    : config_(config), vocabulary_(std::move(vocabulary)), database_(vocabulary_) {}

int MapManager::map_id_of_kf(const KfId& id) const {
  const auto it = agent_to_map_.find(id.agent);
  if (it == agent_to_map_.end()) throw UnknownKeyframe("keyframe agent has no map");
  return it->second;
}

std::uint64_t MapManager::verification_seed(const KfId& query, const KfId& candidate) const {
  // Deterministic per (config seed, keyframe pair), independent of arrival
  // timing, so run-to-run results are reproducible.
  std::uint64_t h = config_.seed ^ 0x9e3779b97f4a7c15ULL;
  const auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  };
  mix(query.agent);
  mix(query.seq);
  mix(candidate.agent);
  mix(candidate.seq);
  return h;
}

IngestResult MapManager::ingest_keyframe(const Keyframe& kf_in, const std::string& label) {
  IngestResult result;
  Keyframe kf = kf_in;
  if (kf.rays.size() != kf.keypoints.size()) kf.compute_rays();

  // New agents start with a dedicated map.
  auto agent_it = agent_to_map_.find(kf.id.agent);
  if (agent_it == agent_to_map_.end()) {
    const int id = next_map_id_++;
    maps_.emplace(id, MapGraph(id, id));
    agent_it = agent_to_map_.emplace(kf.id.agent, id).first;
    agent_labels_[kf.id.agent] = label;
  }
  MapGraph& graph = maps_.at(agent_it->second);
  graph.add_keyframe_node(kf, config_.odometry_window, config_.odometry_information(label));
  const KfId kf_id = kf.id;
  keyframes_.emplace(kf_id, std::move(kf));
  const Keyframe& stored = keyframes_.at(kf_id);

  // Place recognition: insert, then query with the agent's recent keyframes
  // excluded (the new keyframe itself is always within that window).
  const double t_bow = now_ms();
  const BowVector bow = database_.add_keyframe(stored.id, stored.descriptors);
  std::unordered_set<KfId, KfIdHash> exclusion;
  {
    const auto& seq = graph.agent_sequence(stored.id.agent);
    const int n = static_cast<int>(seq.size());
    for (int i = std::max(0, n - config_.bow_exclusion_window); i < n; ++i) {
      exclusion.insert(seq[i]);
    }
  }
  std::vector<QueryResult> candidates =
      database_.query(bow, config_.bow_top_k, exclusion, config_.bow_min_score_ratio);
  result.stats.bow_ms = now_ms() - t_bow;
  result.stats.candidates_queried = static_cast<int>(candidates.size());
  if (candidates.empty()) return result;

  // Verify candidates oldest-map-first, then by descending score; the first
  // accepted constraint wins and the rest are dropped.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [this](const QueryResult& a, const QueryResult& b) {
                     return maps_.at(map_id_of_kf(a.kf)).creation_index() <
                            maps_.at(map_id_of_kf(b.kf)).creation_index();
                   });

  for (const QueryResult& candidate : candidates) {
    const int query_map = agent_it->second;
    const int candidate_map = map_id_of_kf(candidate.kf);
    const bool same_map = candidate_map == query_map;
    if (same_map) {
      // Rate limiting applies before spending verification effort.
      const auto last = last_loop_seq_.find(stored.id.agent);
      if (last != last_loop_seq_.end() &&
          stored.id.seq < last->second + static_cast<std::uint64_t>(config_.min_loop_gap)) {
        ++loops_rate_limited_;
        continue;
      }
    }

    MultiCameraRig rig_q, rig_c;
    try {
      rig_q = build_rig(maps_.at(query_map), keyframes_, stored.id, 1);
      rig_c = build_rig(maps_.at(candidate_map), keyframes_, candidate.kf, 2);
    } catch (const InsufficientNeighbors&) {
      continue;  // trajectory still too short around one of the endpoints
    }

    ++loops_detected_;
    ++result.stats.candidates_verified;
    const VerificationOutcome outcome = verify_candidate(
        rig_q, rig_c, config_.verification(), verification_seed(stored.id, candidate.kf));
    result.stats.matching_ms += outcome.timings.matching_ms;
    result.stats.prefilter_ms += outcome.timings.prefilter_ms;
    result.stats.ransac_ms += outcome.timings.ransac_ms;
    result.stats.covariance_ms += outcome.timings.covariance_ms;
    if (!outcome.accepted()) {
      ++loops_rejected_;
      continue;
    }

    if (!config_.dump_jobs_dir.empty()) {
      std::vector<const Keyframe*> kq, kc;
      for (const auto& m : rig_q.members) kq.push_back(m.keyframe);
      for (const auto& m : rig_c.members) kc.push_back(m.keyframe);
      const auto sets = match_rigs(kq, kc, config_.verification().matcher);
      const auto job = make_job(rig_q, rig_c, sets, config_.verification(),
                                verification_seed(stored.id, candidate.kf));
      const std::string name = "job_q" + std::to_string(stored.id.agent) + "-" +
                               std::to_string(stored.id.seq) + "_c" +
                               std::to_string(candidate.kf.agent) + "-" +
                               std::to_string(candidate.kf.seq) + ".cgjb";
      save_job(job, config_.dump_jobs_dir + "/" + name);
    }

    const double t_pgo = now_ms();
    ManagerEvent event;
    event.constraint = outcome.constraint;
    if (same_map) {
      OptimizeReport report;
      const ApplyLoopResult applied = apply_loop(outcome.constraint, &report);
      if (applied != ApplyLoopResult::Applied) continue;
      event.kind = ManagerEvent::Kind::LoopClosed;
      event.map_id = query_map;
      event.pgo = report;
    } else {
      OptimizeReport report;
      event.absorbed_map_id = maps_.at(query_map).creation_index() >
                                      maps_.at(candidate_map).creation_index()
                                  ? query_map
                                  : candidate_map;
      const int merged = fuse_maps(outcome.constraint, &report);
      event.kind = ManagerEvent::Kind::MapsFused;
      event.map_id = merged;
      event.pgo = report;
    }
    result.stats.pgo_ms += now_ms() - t_pgo;
    ++loops_accepted_;
    result.events.push_back(event);
    break;
  }
  return result;
}

ApplyLoopResult MapManager::apply_loop(const LoopConstraint& constraint, OptimizeReport* report) {
  const int map_q = map_id_of_kf(constraint.query_kf);
  const int map_c = map_id_of_kf(constraint.candidate_kf);
  if (map_q != map_c) {
    throw Error("apply_loop called with keyframes from different maps");
  }
  for (const LoopRecord& rec : loop_log_) {
    const auto& c = rec.constraint;
    if ((c.query_kf == constraint.query_kf && c.candidate_kf == constraint.candidate_kf) ||
        (c.query_kf == constraint.candidate_kf && c.candidate_kf == constraint.query_kf)) {
      return ApplyLoopResult::Duplicate;
    }
  }
  const auto last = last_loop_seq_.find(constraint.query_kf.agent);
  if (last != last_loop_seq_.end() &&
      constraint.query_kf.seq < last->second + static_cast<std::uint64_t>(config_.min_loop_gap)) {
    return ApplyLoopResult::RateLimited;
  }

  MapGraph& graph = maps_.at(map_q);
  // T_cq is the pose of the query sensor in the candidate frame, i.e. the
  // measurement of an edge candidate -> query.
  graph.add_loop_edge(constraint.candidate_kf, constraint.query_kf, constraint.T_cq,
                      constraint.information);
  const OptimizeReport r = graph.optimize(config_.optimizer());
  if (report != nullptr) *report = r;
  last_loop_seq_[constraint.query_kf.agent] = constraint.query_kf.seq;
  log_loop(constraint, false);
  return ApplyLoopResult::Applied;
}

int MapManager::fuse_maps(const LoopConstraint& constraint, OptimizeReport* report) {
  const int map_q = map_id_of_kf(constraint.query_kf);
  const int map_c = map_id_of_kf(constraint.candidate_kf);
  if (map_q == map_c) throw SameMap("fuse_maps called with keyframes of one map");

  MapGraph& graph_q = maps_.at(map_q);
  MapGraph& graph_c = maps_.at(map_c);
  const bool candidate_side_is_reference =
      graph_c.creation_index() < graph_q.creation_index();
  MapGraph& reference = candidate_side_is_reference ? graph_c : graph_q;
  MapGraph& absorbed = candidate_side_is_reference ? graph_q : graph_c;

  // World alignment from the loop transform and the two current states:
  // with the candidate keyframe in the reference map,
  //   T_w1w2 = T_w1c * T_cq * T_w2q^-1,
  // and symmetrically when the query side is the reference.
  Pose T_ref_world_absorbed_world;
  if (candidate_side_is_reference) {
    const Pose& T_w1_c = reference.node(constraint.candidate_kf).T_ws;
    const Pose& T_w2_q = absorbed.node(constraint.query_kf).T_ws;
    T_ref_world_absorbed_world = compose(T_w1_c, compose(constraint.T_cq, inverse(T_w2_q)));
  } else {
    const Pose& T_w1_q = reference.node(constraint.query_kf).T_ws;
    const Pose& T_w2_c = absorbed.node(constraint.candidate_kf).T_ws;
    T_ref_world_absorbed_world =
        compose(T_w1_q, compose(inverse(constraint.T_cq), inverse(T_w2_c)));
  }

  absorbed.apply_rigid_transform(T_ref_world_absorbed_world);
  const int absorbed_id = absorbed.map_id();
  const int reference_id = reference.map_id();
  reference.absorb(std::move(absorbed));
  for (auto& [agent, map_id] : agent_to_map_) {
    if (map_id == absorbed_id) map_id = reference_id;
  }
  maps_.erase(absorbed_id);
  ++fusion_count_;

  reference.add_loop_edge(constraint.candidate_kf, constraint.query_kf, constraint.T_cq,
                          constraint.information);
  const OptimizeReport r = reference.optimize(config_.optimizer());
  if (report != nullptr) *report = r;
  last_loop_seq_[constraint.query_kf.agent] = constraint.query_kf.seq;
  log_loop(constraint, true);
  return reference_id;
}

void MapManager::log_loop(const LoopConstraint& constraint, bool fused) {
  LoopRecord rec;
  rec.constraint = constraint;
  rec.wall_time_ns = wall_ns();
  rec.fused_maps = fused;
  loop_log_.push_back(rec);
}

const MapGraph& MapManager::map_of_agent(std::uint32_t agent) const {
  return maps_.at(agent_to_map_.at(agent));
}

MapGraph& MapManager::map_of_agent(std::uint32_t agent) {
  return maps_.at(agent_to_map_.at(agent));
}

std::vector<int> MapManager::map_ids() const {
  std::vector<int> ids;
  ids.reserve(maps_.size());
  for (const auto& [id, graph] : maps_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

const MapGraph& MapManager::map(int map_id) const { return maps_.at(map_id); }

void MapManager::export_trajectories(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  std::unordered_map<std::uint32_t, const MapGraph*> agent_graphs;
  for (const auto& [agent, map_id] : agent_to_map_) {
    agent_graphs[agent] = &maps_.at(map_id);
  }
  for (const auto& [agent, graph] : agent_graphs) {
    std::ofstream out(dir + "/agent_" + std::to_string(agent) + ".tum");
    if (!out) throw TrajectoryIoError("cannot write trajectory export in " + dir);
    out.precision(17);
    for (const KfId& id : graph->agent_sequence(agent)) {
      const KeyframeNode& n = graph->node(id);
      const double t = static_cast<double>(n.timestamp_ns) * 1e-9;
      out << t << " " << n.T_ws.p.x() << " " << n.T_ws.p.y() << " " << n.T_ws.p.z() << " "
          << n.T_ws.q.x() << " " << n.T_ws.q.y() << " " << n.T_ws.q.z() << " " << n.T_ws.q.w()
          << "\n";
    }
  }
}

void MapManager::export_loop_log(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw TrajectoryIoError("cannot write loop log: " + path);
  out << "query_agent,query_seq,candidate_agent,candidate_seq,inliers,translation_m,"
         "rotation_deg,cov_trace,fused\n";
  out.precision(9);
  for (const LoopRecord& rec : loop_log_) {
    const auto& c = rec.constraint;
    out << c.query_kf.agent << "," << c.query_kf.seq << "," << c.candidate_kf.agent << ","
        << c.candidate_kf.seq << "," << c.inliers << "," << c.T_cq.p.norm() << ","
        << rotation_angle(c.T_cq.q) * 180.0 / std::numbers::pi << "," << c.covariance_trace << ","
        << (rec.fused_maps ? 1 : 0) << "\n";
  }
}

}  // namespace cslam
