#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cslam/keyframe.hpp"

namespace cslam {

struct KeyframeNode {
  KfId id;
  std::uint64_t timestamp_ns = 0;
  Pose T_ws;       // optimized state
  Pose T_ws_odom;  // odometry snapshot, immutable after insertion
};

enum class EdgeKind : std::uint8_t { Odometry, Loop };

struct GraphEdge {
  KfId from;
  KfId to;
  EdgeKind kind = EdgeKind::Odometry;
  Pose measurement;  // T̂_ij: pose of `to` expressed in `from`'s sensor frame
  Matrix6d information = Matrix6d::Identity();
  bool robust = false;  // Cauchy loss; set for loop edges
};

// Residual of one relative-pose edge given the two node states:
//   T_ij = state_i^-1 * state_j
//   e    = [ p_ij - p̂_ij ; 2 * vec(q_ij^-1 * q̂_ij) ]
Vector6d edge_residual(const Pose& measurement, const Pose& state_i, const Pose& state_j);

// Jacobians of edge_residual with respect to the local perturbations
// [δp_i; δθ_i] and [δp_j; δθ_j], where p += δp and q = q * exp_so3(δθ).
void edge_residual_jacobians(const Pose& measurement, const Pose& state_i, const Pose& state_j,
                             Matrix6d& J_i, Matrix6d& J_j);

struct OptimizeConfig {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;       // infinity norm of the gradient
  double relative_cost_tolerance = 1e-9;  // on accepted steps
  double cauchy_scale = 1.0;              // on the whitened residual norm
  bool robust_loops = true;
};

struct OptimizeReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted LM steps
  bool converged = false;
  std::string termination;
};

// Per-agent pose graph (merged across agents after map fusion). Nodes are
// keyframe poses; edges are odometry constraints within a q-window plus
// loop-closure constraints. The anchor (first keyframe of the reference
// agent) fixes the gauge and is never moved by optimize().
class MapGraph {
 public:
  MapGraph() = default;
  MapGraph(int map_id, int creation_index) : map_id_(map_id), creation_index_(creation_index) {}

  // Inserts a node and odometry edges to up to q preceding keyframes of the
  // same agent. The new state continues from the previous node's optimized
  // state using the relative odometry delta; edge information is
  // base_information scaled by 1/seq_gap. Throws DuplicateNode.
  void add_keyframe_node(const Keyframe& kf, int q, const Matrix6d& base_information);

  void add_loop_edge(const KfId& from, const KfId& to, const Pose& measurement,
                     const Matrix6d& information);

  // Inserts a fully specified edge (both endpoints must exist).
  void add_edge(const GraphEdge& edge);

  OptimizeReport optimize(const OptimizeConfig& config = {});

  bool has_node(const KfId& id) const { return nodes_.contains(id); }
  const KeyframeNode& node(const KfId& id) const;
  KeyframeNode& node(const KfId& id);
  std::size_t num_nodes() const { return nodes_.size(); }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  int map_id() const { return map_id_; }
  int creation_index() const { return creation_index_; }
  KfId anchor() const { return anchor_; }

  std::vector<std::uint32_t> agents() const;
  // Keyframes of one agent in arrival order.
  const std::vector<KfId>& agent_sequence(std::uint32_t agent) const;
  std::optional<KfId> predecessor(const KfId& id) const;
  std::optional<KfId> successor(const KfId& id) const;
  // All node ids in deterministic (sorted) order.
  std::vector<KfId> sorted_node_ids() const;

  // Left-multiplies every node state by T (rigid re-expression of the whole
  // map in a new world frame). Odometry snapshots are not touched.
  void apply_rigid_transform(const Pose& T);

  // Moves all nodes, edges and agent sequences of `other` into this graph.
  // The caller is responsible for having aligned `other` first.
  void absorb(MapGraph&& other);

  bool connected() const;

 private:
  int map_id_ = 0;
  int creation_index_ = 0;
  std::unordered_map<KfId, KeyframeNode, KfIdHash> nodes_;
  std::vector<GraphEdge> edges_;
  std::unordered_map<std::uint32_t, std::vector<KfId>> agent_sequences_;
  KfId anchor_;
  bool has_anchor_ = false;
};

// Plain-text pose-graph interchange (VERTEX_SE3:QUAT / EDGE_SE3:QUAT).
// Loop edges are marked with "# loop <i> <j>" comment lines so a re-import
// restores edge kinds; other tools ignore the comments.
void save_g2o(const MapGraph& graph, const std::string& path);
MapGraph load_g2o(const std::string& path);

}  // namespace cslam
