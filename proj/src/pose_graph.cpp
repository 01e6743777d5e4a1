#include "cslam/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "cslam/errors.hpp"

namespace cslam {

Vector6d edge_residual(const Pose& measurement, const Pose& state_i, const Pose& state_j) {
  const Pose T_ij = compose(inverse(state_i), state_j);
  Eigen::Quaterniond q_e = T_ij.q.conjugate() * measurement.q;
  if (q_e.w() < 0.0) q_e.coeffs() = -q_e.coeffs();
  Vector6d e;
  e.head<3>() = T_ij.p - measurement.p;
  e.tail<3>() = 2.0 * q_e.vec();
  return e;
}

void edge_residual_jacobians(const Pose& measurement, const Pose& state_i, const Pose& state_j,
                             Matrix6d& J_i, Matrix6d& J_j) {
  const Eigen::Matrix3d R_i_t = state_i.rotation().transpose();
  const Eigen::Vector3d p_ij = R_i_t * (state_j.p - state_i.p);

  Eigen::Quaterniond q_e = (state_j.q.conjugate() * state_i.q) * measurement.q;
  if (q_e.w() < 0.0) q_e.coeffs() = -q_e.coeffs();
  const double w_e = q_e.w();
  const Eigen::Vector3d v_e = q_e.vec();
  const Eigen::Matrix3d R_hat_t = measurement.rotation().transpose();

  J_i.setZero();
  J_j.setZero();
  // Translation rows.
  J_i.topLeftCorner<3, 3>() = -R_i_t;
  J_i.topRightCorner<3, 3>() = skew(p_ij);
  J_j.topLeftCorner<3, 3>() = R_i_t;
  // Rotation rows (residual 2*vec of the canonicalized error quaternion).
  J_i.bottomRightCorner<3, 3>() = (w_e * Eigen::Matrix3d::Identity() + skew(v_e)) * R_hat_t;
  J_j.bottomRightCorner<3, 3>() = -w_e * Eigen::Matrix3d::Identity() + skew(v_e);
}

void MapGraph::add_keyframe_node(const Keyframe& kf, int q, const Matrix6d& base_information) {
  if (nodes_.contains(kf.id)) throw DuplicateNode("keyframe node already in graph");

  KeyframeNode node;
  node.id = kf.id;
  node.timestamp_ns = kf.timestamp_ns;
  node.T_ws_odom = kf.T_ws_odom;

  auto& seq = agent_sequences_[kf.id.agent];
  if (seq.empty()) {
    node.T_ws = kf.T_ws_odom;
  } else {
    // Continue from the previous node's optimized state so corrections from
    // earlier optimizations and map fusions carry forward.
    const KeyframeNode& prev = nodes_.at(seq.back());
    const Pose delta = compose(inverse(prev.T_ws_odom), kf.T_ws_odom);
    node.T_ws = compose(prev.T_ws, delta);
  }

  if (!has_anchor_) {
    anchor_ = kf.id;
    has_anchor_ = true;
  }

  const int n_back = std::min<int>(q, static_cast<int>(seq.size()));
  for (int b = 1; b <= n_back; ++b) {
    const KfId prev_id = seq[seq.size() - static_cast<std::size_t>(b)];
    const KeyframeNode& prev = nodes_.at(prev_id);
    GraphEdge edge;
    edge.from = prev_id;
    edge.to = kf.id;
    edge.kind = EdgeKind::Odometry;
    edge.robust = false;
    edge.measurement = compose(inverse(prev.T_ws_odom), kf.T_ws_odom);
    const double gap = static_cast<double>(std::max<std::int64_t>(
        1, static_cast<std::int64_t>(kf.id.seq) - static_cast<std::int64_t>(prev_id.seq)));
    edge.information = base_information / gap;
    edges_.push_back(edge);
  }

  seq.push_back(kf.id);
  nodes_.emplace(kf.id, std::move(node));
}

void MapGraph::add_loop_edge(const KfId& from, const KfId& to, const Pose& measurement,
                             const Matrix6d& information) {
  GraphEdge edge;
  edge.from = from;
  edge.to = to;
  edge.kind = EdgeKind::Loop;
  edge.robust = true;
  edge.measurement = measurement;
  edge.information = information;
  add_edge(edge);
}

void MapGraph::add_edge(const GraphEdge& edge) {
  if (!nodes_.contains(edge.from) || !nodes_.contains(edge.to)) {
    throw UnknownKeyframe("edge references a keyframe not in this graph");
  }
  edges_.push_back(edge);
}

const KeyframeNode& MapGraph::node(const KfId& id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) throw UnknownKeyframe("no such keyframe node");
  return it->second;
}

KeyframeNode& MapGraph::node(const KfId& id) {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) throw UnknownKeyframe("no such keyframe node");
  return it->second;
}

std::vector<std::uint32_t> MapGraph::agents() const {
  std::vector<std::uint32_t> out;
  out.reserve(agent_sequences_.size());
  for (const auto& [agent, seq] : agent_sequences_) out.push_back(agent);
  std::sort(out.begin(), out.end());
  return out;
}

const std::vector<KfId>& MapGraph::agent_sequence(std::uint32_t agent) const {
  static const std::vector<KfId> empty;
  const auto it = agent_sequences_.find(agent);
  return it == agent_sequences_.end() ? empty : it->second;
}

std::optional<KfId> MapGraph::predecessor(const KfId& id) const {
  const auto it = agent_sequences_.find(id.agent);
  if (it == agent_sequences_.end()) return std::nullopt;
  const auto& seq = it->second;
  const auto pos = std::find(seq.begin(), seq.end(), id);
  if (pos == seq.end() || pos == seq.begin()) return std::nullopt;
  return *(pos - 1);
}

std::optional<KfId> MapGraph::successor(const KfId& id) const {
  const auto it = agent_sequences_.find(id.agent);
  if (it == agent_sequences_.end()) return std::nullopt;
  const auto& seq = it->second;
  const auto pos = std::find(seq.begin(), seq.end(), id);
  if (pos == seq.end() || pos + 1 == seq.end()) return std::nullopt;
  return *(pos + 1);
}

std::vector<KfId> MapGraph::sorted_node_ids() const {
  std::vector<KfId> ids;
  ids.reserve(nodes_.size());
  for (const auto& [id, n] : nodes_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void MapGraph::apply_rigid_transform(const Pose& T) {
  for (auto& [id, n] : nodes_) n.T_ws = compose(T, n.T_ws);
}

void MapGraph::absorb(MapGraph&& other) {
  for (auto& [id, n] : other.nodes_) {
    if (nodes_.contains(id)) throw DuplicateNode("absorbed map shares a keyframe id");
    nodes_.emplace(id, std::move(n));
  }
  for (auto& [agent, seq] : other.agent_sequences_) {
    auto& mine = agent_sequences_[agent];
    mine.insert(mine.end(), seq.begin(), seq.end());
  }
  edges_.insert(edges_.end(), other.edges_.begin(), other.edges_.end());
  other.nodes_.clear();
  other.edges_.clear();
  other.agent_sequences_.clear();
}

bool MapGraph::connected() const {
  if (nodes_.empty()) return true;
  std::unordered_map<KfId, std::vector<KfId>, KfIdHash> adj;
  for (const GraphEdge& e : edges_) {
    adj[e.from].push_back(e.to);
    adj[e.to].push_back(e.from);
  }
  std::unordered_map<KfId, bool, KfIdHash> seen;
  std::deque<KfId> queue{has_anchor_ ? anchor_ : nodes_.begin()->first};
  seen[queue.front()] = true;
  std::size_t count = 0;
  while (!queue.empty()) {
    const KfId cur = queue.front();
    queue.pop_front();
    ++count;
    for (const KfId& next : adj[cur]) {
      if (!seen[next]) {
        seen[next] = true;
        queue.push_back(next);
      }
    }
  }
  return count == nodes_.size();
}

namespace {

struct EdgeTerm {
  const GraphEdge* edge;
  Matrix6d sqrt_information;  // L^T with W = L L^T
  int idx_i;                  // -1 if the node is the anchor (fixed)
  int idx_j;
};

double cauchy_cost(double s, double c2) { return c2 * std::log1p(s / c2); }
double cauchy_weight(double s, double c2) { return 1.0 / (1.0 + s / c2); }

double total_cost(const std::vector<EdgeTerm>& terms,
                  const std::unordered_map<KfId, KeyframeNode, KfIdHash>& nodes,
                  const OptimizeConfig& config) {
  const double c2 = config.cauchy_scale * config.cauchy_scale;
  double cost = 0.0;
  for (const EdgeTerm& term : terms) {
    const GraphEdge& e = *term.edge;
    const Vector6d r =
        term.sqrt_information * edge_residual(e.measurement, nodes.at(e.from).T_ws, nodes.at(e.to).T_ws);
    const double s = r.squaredNorm();
    cost += (e.robust && config.robust_loops) ? cauchy_cost(s, c2) : s;
  }
  return cost;
}

void apply_step(const std::vector<KfId>& order,
                std::unordered_map<KfId, KeyframeNode, KfIdHash>& nodes, const Eigen::VectorXd& dx) {
  for (std::size_t k = 0; k < order.size(); ++k) {
    KeyframeNode& n = nodes.at(order[k]);
    const auto d = dx.segment<6>(static_cast<Eigen::Index>(6 * k));
    n.T_ws.p += d.head<3>();
    n.T_ws.q = n.T_ws.q * exp_so3(d.tail<3>());
    n.T_ws.normalize();
  }
}

}  // namespace

OptimizeReport MapGraph::optimize(const OptimizeConfig& config) {
  OptimizeReport report;
  if (nodes_.empty()) {
    report.converged = true;
    report.termination = "empty";
    return report;
  }
  if (!connected()) throw NotConnected("pose graph is not connected");

  // Deterministic assembly order regardless of insertion history.
  const std::vector<KfId> sorted_ids = sorted_node_ids();
  std::vector<KfId> free_ids;
  free_ids.reserve(sorted_ids.size());
  std::unordered_map<KfId, int, KfIdHash> index;
  for (const KfId& id : sorted_ids) {
    if (id == anchor_) continue;
    index.emplace(id, static_cast<int>(free_ids.size()));
    free_ids.push_back(id);
  }

  std::vector<const GraphEdge*> ordered_edges;
  ordered_edges.reserve(edges_.size());
  for (const GraphEdge& e : edges_) ordered_edges.push_back(&e);
  std::sort(ordered_edges.begin(), ordered_edges.end(), [](const GraphEdge* a, const GraphEdge* b) {
    if (a->from != b->from) return a->from < b->from;
    if (a->to != b->to) return a->to < b->to;
    return a->kind < b->kind;
  });

  std::vector<EdgeTerm> terms;
  terms.reserve(ordered_edges.size());
  for (const GraphEdge* e : ordered_edges) {
    if ((e->information - e->information.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
      throw NonPSDInformation("edge information matrix is not symmetric");
    }
    const Eigen::LLT<Matrix6d> llt(e->information);
    if (llt.info() != Eigen::Success) {
      throw NonPSDInformation("edge information matrix is not positive definite");
    }
    EdgeTerm term;
    term.edge = e;
    term.sqrt_information = llt.matrixL().transpose();
    const auto it_i = index.find(e->from);
    const auto it_j = index.find(e->to);
    term.idx_i = it_i == index.end() ? -1 : it_i->second;
    term.idx_j = it_j == index.end() ? -1 : it_j->second;
    terms.push_back(term);
  }

  const Eigen::Index dim = static_cast<Eigen::Index>(6 * free_ids.size());
  const double c2 = config.cauchy_scale * config.cauchy_scale;

  const auto linearize = [&](const std::unordered_map<KfId, KeyframeNode, KfIdHash>& nodes,
                             Eigen::SparseMatrix<double>& H, Eigen::VectorXd& g) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(terms.size() * 144);
    g.setZero(dim);
    for (const EdgeTerm& term : terms) {
      const GraphEdge& e = *term.edge;
      const Pose& si = nodes.at(e.from).T_ws;
      const Pose& sj = nodes.at(e.to).T_ws;
      Vector6d r = term.sqrt_information * edge_residual(e.measurement, si, sj);
      Matrix6d J_i, J_j;
      edge_residual_jacobians(e.measurement, si, sj, J_i, J_j);
      J_i = term.sqrt_information * J_i;
      J_j = term.sqrt_information * J_j;
      if (e.robust && config.robust_loops) {
        const double w = cauchy_weight(r.squaredNorm(), c2);
        const double sw = std::sqrt(w);
        r *= sw;
        J_i *= sw;
        J_j *= sw;
      }
      const auto add_block = [&triplets](int row, int col, const Matrix6d& m) {
        for (int a = 0; a < 6; ++a) {
          for (int b = 0; b < 6; ++b) {
            triplets.emplace_back(6 * row + a, 6 * col + b, m(a, b));
          }
        }
      };
      if (term.idx_i >= 0) {
        add_block(term.idx_i, term.idx_i, J_i.transpose() * J_i);
        g.segment<6>(6 * term.idx_i) += J_i.transpose() * r;
      }
      if (term.idx_j >= 0) {
        add_block(term.idx_j, term.idx_j, J_j.transpose() * J_j);
        g.segment<6>(6 * term.idx_j) += J_j.transpose() * r;
      }
      if (term.idx_i >= 0 && term.idx_j >= 0) {
        const Matrix6d off = J_i.transpose() * J_j;
        add_block(term.idx_i, term.idx_j, off);
        add_block(term.idx_j, term.idx_i, off.transpose());
      }
    }
    H.resize(dim, dim);
    H.setFromTriplets(triplets.begin(), triplets.end());
  };

  double cost = total_cost(terms, nodes_, config);
  report.initial_cost = cost;
  report.final_cost = cost;

  if (dim == 0) {
    report.converged = true;
    report.termination = "anchor_only";
    return report;
  }

  Eigen::SparseMatrix<double> H;
  Eigen::VectorXd g;
  linearize(nodes_, H, g);
  if (g.size() == 0 || g.cwiseAbs().maxCoeff() < config.gradient_tolerance) {
    report.converged = true;
    report.termination = "gradient";
    return report;
  }

  double lambda = 1e-4;
  double nu = 2.0;
  for (int iter = 0; iter < config.max_iterations;) {
    // Marquardt damping on the diagonal.
    Eigen::SparseMatrix<double> H_damped = H;
    for (Eigen::Index k = 0; k < dim; ++k) {
      H_damped.coeffRef(k, k) = H.coeff(k, k) + lambda * std::max(H.coeff(k, k), 1e-12);
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H_damped);
    bool step_ok = solver.info() == Eigen::Success;
    Eigen::VectorXd dx;
    if (step_ok) {
      dx = solver.solve(-g);
      step_ok = solver.info() == Eigen::Success && dx.allFinite();
    }
    if (step_ok) {
      auto candidate = nodes_;
      apply_step(free_ids, candidate, dx);
      const double new_cost = total_cost(terms, candidate, config);
      if (new_cost < cost) {
        nodes_ = std::move(candidate);
        ++iter;
        report.iterations = iter;
        const double drop = cost - new_cost;
        cost = new_cost;
        report.final_cost = cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        nu = 2.0;
        if (drop < config.relative_cost_tolerance * std::max(cost, 1e-300)) {
          report.converged = true;
          report.termination = "cost_change";
          return report;
        }
        linearize(nodes_, H, g);
        if (g.cwiseAbs().maxCoeff() < config.gradient_tolerance) {
          report.converged = true;
          report.termination = "gradient";
          return report;
        }
        continue;
      }
    }
    lambda *= nu;
    nu *= 2.0;
    if (lambda > 1e14) {
      report.termination = "stalled";
      return report;
    }
  }
  report.termination = "max_iterations";
  return report;
}

void save_g2o(const MapGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TrajectoryIoError("cannot open pose graph file for writing: " + path);
  const std::vector<KfId> ids = graph.sorted_node_ids();
  std::unordered_map<KfId, int, KfIdHash> index;
  out.precision(17);
  out << "# poses " << ids.size() << "\n";
  for (std::size_t k = 0; k < ids.size(); ++k) {
    index.emplace(ids[k], static_cast<int>(k));
    const KeyframeNode& n = graph.node(ids[k]);
    out << "# kf " << k << " agent " << ids[k].agent << " seq " << ids[k].seq << " ts "
        << n.timestamp_ns << "\n";
    out << "VERTEX_SE3:QUAT " << k << " " << n.T_ws.p.x() << " " << n.T_ws.p.y() << " "
        << n.T_ws.p.z() << " " << n.T_ws.q.x() << " " << n.T_ws.q.y() << " " << n.T_ws.q.z() << " "
        << n.T_ws.q.w() << "\n";
  }
  out << "FIX " << index.at(graph.anchor()) << "\n";
  for (const GraphEdge& e : graph.edges()) {
    if (e.kind == EdgeKind::Loop) {
      out << "# loop " << index.at(e.from) << " " << index.at(e.to) << "\n";
    }
    out << "EDGE_SE3:QUAT " << index.at(e.from) << " " << index.at(e.to) << " "
        << e.measurement.p.x() << " " << e.measurement.p.y() << " " << e.measurement.p.z() << " "
        << e.measurement.q.x() << " " << e.measurement.q.y() << " " << e.measurement.q.z() << " "
        << e.measurement.q.w();
    for (int a = 0; a < 6; ++a) {
      for (int b = a; b < 6; ++b) out << " " << e.information(a, b);
    }
    out << "\n";
  }
}

MapGraph load_g2o(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrajectoryIoError("cannot open pose graph file: " + path);
  MapGraph graph;
  std::string line;
  bool next_edge_is_loop = false;
  // Vertices become agent-0 keyframes keyed by their integer id.
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "#") {
      std::string what;
      ss >> what;
      if (what == "loop") next_edge_is_loop = true;
      continue;
    }
    if (tag == "VERTEX_SE3:QUAT") {
      long id = 0;
      double px, py, pz, qx, qy, qz, qw;
      ss >> id >> px >> py >> pz >> qx >> qy >> qz >> qw;
      if (!ss) throw TrajectoryIoError("malformed vertex line: " + line);
      Keyframe kf;
      kf.id = {0, static_cast<std::uint64_t>(id)};
      kf.T_ws_odom = Pose(Eigen::Quaterniond(qw, qx, qy, qz), {px, py, pz});
      graph.add_keyframe_node(kf, 0, Matrix6d::Identity());
      graph.node(kf.id).T_ws = kf.T_ws_odom;
    } else if (tag == "EDGE_SE3:QUAT") {
      long i = 0, j = 0;
      double px, py, pz, qx, qy, qz, qw;
      ss >> i >> j >> px >> py >> pz >> qx >> qy >> qz >> qw;
      Matrix6d info;
      for (int a = 0; a < 6; ++a) {
        for (int b = a; b < 6; ++b) {
          double v;
          ss >> v;
          info(a, b) = v;
          info(b, a) = v;
        }
      }
      if (!ss) throw TrajectoryIoError("malformed edge line: " + line);
      const Pose meas(Eigen::Quaterniond(qw, qx, qy, qz), {px, py, pz});
      GraphEdge edge;
      edge.from = {0, static_cast<std::uint64_t>(i)};
      edge.to = {0, static_cast<std::uint64_t>(j)};
      edge.kind = next_edge_is_loop ? EdgeKind::Loop : EdgeKind::Odometry;
      edge.robust = next_edge_is_loop;
      edge.measurement = meas;
      edge.information = info;
      graph.add_edge(edge);
      next_edge_is_loop = false;
    }
  }
  return graph;
}

}  // namespace cslam
