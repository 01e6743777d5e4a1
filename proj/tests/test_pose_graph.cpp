#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cslam/errors.hpp"
#include "cslam/pose_graph.hpp"
#include "cslam/rng.hpp"
#include "support/scene.hpp"

using namespace cslam;

namespace {

constexpr double kRad = std::numbers::pi / 180.0;

Matrix6d diagonal_information(double sigma_p, double sigma_rot_rad) {
  Vector6d d;
  d << 1.0 / (sigma_p * sigma_p), 1.0 / (sigma_p * sigma_p), 1.0 / (sigma_p * sigma_p),
      1.0 / (sigma_rot_rad * sigma_rot_rad), 1.0 / (sigma_rot_rad * sigma_rot_rad),
      1.0 / (sigma_rot_rad * sigma_rot_rad);
  return d.asDiagonal();
}

Keyframe make_kf(std::uint32_t agent, std::uint64_t seq, const Pose& odom) {
  Keyframe kf;
  kf.id = {agent, seq};
  kf.timestamp_ns = seq * 100000000ull;
  kf.T_ws_odom = odom;
  return kf;
}

// Drifted straight-line chain: ground truth marches along +x, odometry
// accumulates a small per-step error.
struct Chain {
  std::vector<Pose> gt;
  std::vector<Pose> odom;
};

Chain make_drifted_chain(int n, double step, Rng& rng, double trans_drift, double rot_drift_rad) {
  Chain chain;
  Pose odom;
  const Eigen::Vector3d drift_dir = rng.unit_vec3();
  const Eigen::Vector3d drift_axis = rng.unit_vec3();
  for (int k = 0; k < n; ++k) {
    chain.gt.push_back(Pose(Eigen::Quaterniond::Identity(), {k * step, 0.0, 0.0}));
    if (k == 0) {
      chain.odom.push_back(Pose::identity());
      odom = chain.odom.back();
      continue;
    }
    Pose delta = compose(inverse(chain.gt[k - 1]), chain.gt[k]);
    delta.p += trans_drift * step * drift_dir + rng.gaussian_vec3(0.1 * trans_drift * step);
    delta.q = delta.q * exp_so3(rot_drift_rad * step * drift_axis);
    delta.normalize();
    odom = compose(odom, delta);
    chain.odom.push_back(odom);
  }
  return chain;
}

double rms_position_error(const MapGraph& graph, const std::vector<Pose>& gt,
                          std::uint32_t agent = 0) {
  double sum = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const auto& n = graph.node({agent, k});
    sum += (n.T_ws.p - gt[k].p).squaredNorm();
  }
  return std::sqrt(sum / gt.size());
}

}  // namespace

TEST_CASE("edge residual basics") {
  Rng rng(1);
  const Pose si = testing::random_pose(rng, 2.0, 3.0);
  const Pose sj = testing::random_pose(rng, 2.0, 3.0);
  const Pose meas = compose(inverse(si), sj);
  CHECK(edge_residual(meas, si, sj).norm() < 1e-12);

  // 1 cm translation discrepancy along the measurement x axis.
  Pose meas_off = meas;
  meas_off.p -= Eigen::Vector3d(0.01, 0.0, 0.0);
  const Vector6d e = edge_residual(meas_off, si, sj);
  CHECK(e.head<3>().x() == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(e.head<3>().tail<2>().norm() < 1e-12);
  CHECK(e.tail<3>().norm() < 1e-12);

  // Small rotation discrepancy about z: rotational part ~ (0,0,theta).
  for (double theta : {1e-4, 1e-3, 1e-2}) {
    Pose meas_rot = meas;
    meas_rot.q = meas.q * exp_so3({0.0, 0.0, theta});
    const Vector6d er = edge_residual(meas_rot, si, sj);
    CHECK((er.tail<3>() - Eigen::Vector3d(0.0, 0.0, theta)).norm() < theta * theta * theta + 1e-12);
  }
}

TEST_CASE("residual jacobians match central finite differences") {
  Rng rng(2);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose si = testing::random_pose(rng, 2.5, 4.0);
    const Pose sj = testing::random_pose(rng, 2.5, 4.0);
    const Pose meas = testing::random_pose(rng, 2.5, 4.0);
    Matrix6d J_i, J_j;
    edge_residual_jacobians(meas, si, sj, J_i, J_j);

    const auto perturb = [](const Pose& T, const Vector6d& step) {
      Pose out = T;
      out.p += step.head<3>();
      out.q = T.q * exp_so3(step.tail<3>());
      out.normalize();
      return out;
    };
    Matrix6d fd_i, fd_j;
    for (int d = 0; d < 6; ++d) {
      Vector6d step = Vector6d::Zero();
      step(d) = h;
      fd_i.col(d) = (edge_residual(meas, perturb(si, step), sj) -
                     edge_residual(meas, perturb(si, -step), sj)) /
                    (2.0 * h);
      fd_j.col(d) = (edge_residual(meas, si, perturb(sj, step)) -
                     edge_residual(meas, si, perturb(sj, -step))) /
                    (2.0 * h);
    }
    CHECK((J_i - fd_i).norm() / fd_i.norm() < 1e-5);
    CHECK((J_j - fd_j).norm() / fd_j.norm() < 1e-5);
  }
}

TEST_CASE("add_keyframe_node q-window edges") {
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  MapGraph graph(0, 0);
  for (int k = 0; k < 5; ++k) {
    graph.add_keyframe_node(
        make_kf(0, k, Pose(Eigen::Quaterniond::Identity(), {0.3 * k, 0.0, 0.0})), 4, info);
  }
  // First keyframe contributed no edges; the 5th connects to all 4 predecessors.
  CHECK(graph.edges().size() == 0 + 1 + 2 + 3 + 4);
  int edges_to_last = 0;
  for (const auto& e : graph.edges()) {
    if (e.to == KfId{0, 4}) ++edges_to_last;
    CHECK(e.kind == EdgeKind::Odometry);
    CHECK_FALSE(e.robust);
  }
  CHECK(edges_to_last == 4);

  // Information scales with 1/gap.
  for (const auto& e : graph.edges()) {
    const double gap = static_cast<double>(e.to.seq - e.from.seq);
    CHECK(e.information(0, 0) == doctest::Approx(info(0, 0) / gap));
  }

  CHECK_THROWS_AS(graph.add_keyframe_node(make_kf(0, 4, Pose::identity()), 4, info),
                  DuplicateNode);

  // q = 1 chain of 10 keyframes: a simple chain of 9 edges.
  MapGraph chain_graph(1, 1);
  for (int k = 0; k < 10; ++k) {
    chain_graph.add_keyframe_node(
        make_kf(0, k, Pose(Eigen::Quaterniond::Identity(), {0.3 * k, 0.0, 0.0})), 1, info);
  }
  CHECK(chain_graph.edges().size() == 9);
}

TEST_CASE("optimize is a fixed point on consistent measurements") {
  Rng rng(3);
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  MapGraph graph(0, 0);
  Chain chain = make_drifted_chain(20, 0.5, rng, 0.0, 0.0);  // no drift
  for (int k = 0; k < 20; ++k) graph.add_keyframe_node(make_kf(0, k, chain.odom[k]), 4, info);
  graph.add_loop_edge({0, 0}, {0, 19}, compose(inverse(chain.gt[0]), chain.gt[19]),
                      diagonal_information(0.01, 0.1 * kRad));

  std::vector<Pose> before;
  for (int k = 0; k < 20; ++k) before.push_back(graph.node({0, k}).T_ws);
  const auto report = graph.optimize();
  CHECK(report.converged);
  CHECK(report.iterations <= 1);
  for (int k = 0; k < 20; ++k) {
    CHECK((graph.node({0, k}).T_ws.p - before[k].p).norm() < 1e-10);
    CHECK(rotation_distance(graph.node({0, k}).T_ws, before[k]) < 1e-10);
  }
}

TEST_CASE("optimize corrects a drifted chain with one exact loop") {
  Rng rng(4);
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  Chain chain = make_drifted_chain(50, 0.5, rng, 0.01, 0.05 * kRad);

  MapGraph graph(0, 0);
  for (int k = 0; k < 50; ++k) graph.add_keyframe_node(make_kf(0, k, chain.odom[k]), 4, info);

  const double endpoint_before = (graph.node({0, 49}).T_ws.p - chain.gt[49].p).norm();
  REQUIRE(endpoint_before > 0.05);  // the drift harness actually drifts

  graph.add_loop_edge({0, 0}, {0, 49}, compose(inverse(chain.gt[0]), chain.gt[49]),
                      diagonal_information(0.01, 0.1 * kRad));
  const auto report = graph.optimize();
  CHECK(report.converged);
  CHECK(report.final_cost <= report.initial_cost);

  const double endpoint_after = (graph.node({0, 49}).T_ws.p - chain.gt[49].p).norm();
  CHECK(endpoint_after < 0.1 * endpoint_before);
}

TEST_CASE("anchor pose is bit-identical after optimization") {
  Rng rng(5);
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  Chain chain = make_drifted_chain(30, 0.5, rng, 0.02, 0.1 * kRad);
  MapGraph graph(0, 0);
  for (int k = 0; k < 30; ++k) graph.add_keyframe_node(make_kf(0, k, chain.odom[k]), 4, info);
  graph.add_loop_edge({0, 0}, {0, 29}, compose(inverse(chain.gt[0]), chain.gt[29]),
                      diagonal_information(0.01, 0.1 * kRad));

  const Pose anchor_before = graph.node(graph.anchor()).T_ws;
  graph.optimize();
  const Pose anchor_after = graph.node(graph.anchor()).T_ws;
  CHECK(anchor_before.q.w() == anchor_after.q.w());
  CHECK(anchor_before.q.x() == anchor_after.q.x());
  CHECK(anchor_before.q.y() == anchor_after.q.y());
  CHECK(anchor_before.q.z() == anchor_after.q.z());
  CHECK(anchor_before.p.x() == anchor_after.p.x());
  CHECK(anchor_before.p.y() == anchor_after.p.y());
  CHECK(anchor_before.p.z() == anchor_after.p.z());
}

TEST_CASE("robust loss suppresses a gross outlier loop") {
  Rng rng(6);
  const Matrix6d odom_info = diagonal_information(0.05, 0.5 * kRad);
  const Matrix6d loop_info = diagonal_information(0.02, 0.2 * kRad);

  const auto build = [&](Rng& r) {
    Chain chain = make_drifted_chain(50, 0.5, r, 0.015, 0.08 * kRad);
    MapGraph graph(0, 0);
    for (int k = 0; k < 50; ++k) graph.add_keyframe_node(make_kf(0, k, chain.odom[k]), 4, odom_info);
    // Five correct loops spread along the chain.
    const int pairs[5][2] = {{0, 49}, {5, 45}, {10, 40}, {0, 30}, {15, 49}};
    for (const auto& pr : pairs) {
      graph.add_loop_edge({0, static_cast<std::uint64_t>(pr[0])},
                          {0, static_cast<std::uint64_t>(pr[1])},
                          compose(inverse(chain.gt[pr[0]]), chain.gt[pr[1]]), loop_info);
    }
    return std::pair<MapGraph, Chain>(std::move(graph), std::move(chain));
  };

  // Baseline: no outlier.
  Rng r1(77);
  auto [clean_graph, clean_chain] = build(r1);
  clean_graph.optimize();
  const double ate_clean = rms_position_error(clean_graph, clean_chain.gt);

  // One gross (10 m) outlier loop, robust loss on.
  Rng r2(77);
  auto [robust_graph, robust_chain] = build(r2);
  Pose wrong = compose(inverse(robust_chain.gt[20]), robust_chain.gt[35]);
  wrong.p += Eigen::Vector3d(10.0, 0.0, 0.0);
  robust_graph.add_loop_edge({0, 20}, {0, 35}, wrong, loop_info);
  robust_graph.optimize();
  const double ate_robust = rms_position_error(robust_graph, robust_chain.gt);

  // Same graph, robust loss off.
  Rng r3(77);
  auto [naive_graph, naive_chain] = build(r3);
  naive_graph.add_loop_edge({0, 20}, {0, 35}, wrong, loop_info);
  OptimizeConfig no_robust;
  no_robust.robust_loops = false;
  naive_graph.optimize(no_robust);
  const double ate_naive = rms_position_error(naive_graph, naive_chain.gt);

  CHECK(ate_robust <= 2.0 * ate_clean);
  CHECK(ate_naive >= 10.0 * ate_robust);
}

TEST_CASE("optimization is invariant to node insertion order") {
  Rng rng(7);
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  Chain a = make_drifted_chain(15, 0.5, rng, 0.01, 0.05 * kRad);
  Chain b = make_drifted_chain(15, 0.5, rng, 0.01, 0.05 * kRad);

  const auto build = [&](bool interleaved) {
    MapGraph graph(0, 0);
    if (interleaved) {
      for (int k = 0; k < 15; ++k) {
        graph.add_keyframe_node(make_kf(0, k, a.odom[k]), 4, info);
        graph.add_keyframe_node(make_kf(1, k, b.odom[k]), 4, info);
      }
    } else {
      for (int k = 0; k < 15; ++k) graph.add_keyframe_node(make_kf(0, k, a.odom[k]), 4, info);
      for (int k = 0; k < 15; ++k) graph.add_keyframe_node(make_kf(1, k, b.odom[k]), 4, info);
    }
    // Cross loops tie the two chains together (both run along +x).
    for (int k : {2, 7, 12}) {
      graph.add_loop_edge({0, static_cast<std::uint64_t>(k)}, {1, static_cast<std::uint64_t>(k)},
                          Pose::identity(), diagonal_information(0.02, 0.2 * kRad));
    }
    graph.optimize();
    return graph;
  };

  const MapGraph g1 = build(false);
  const MapGraph g2 = build(true);
  for (std::uint32_t agent = 0; agent < 2; ++agent) {
    for (int k = 0; k < 15; ++k) {
      const KfId id{agent, static_cast<std::uint64_t>(k)};
      CHECK((g1.node(id).T_ws.p - g2.node(id).T_ws.p).norm() < 1e-9);
      CHECK(rotation_distance(g1.node(id).T_ws, g2.node(id).T_ws) < 1e-9);
    }
  }
}

TEST_CASE("optimize rejects broken graphs") {
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  MapGraph graph(0, 0);
  graph.add_keyframe_node(make_kf(0, 0, Pose::identity()), 4, info);
  graph.add_keyframe_node(make_kf(1, 0, Pose::identity()), 4, info);  // disconnected agent
  CHECK_THROWS_AS(graph.optimize(), NotConnected);

  MapGraph bad(1, 1);
  bad.add_keyframe_node(make_kf(0, 0, Pose::identity()), 4, info);
  bad.add_keyframe_node(make_kf(0, 1, Pose::identity()), 4, info);
  GraphEdge e;
  e.from = {0, 0};
  e.to = {0, 1};
  e.information = Matrix6d::Zero();  // not PD
  bad.add_edge(e);
  CHECK_THROWS_AS(bad.optimize(), NonPSDInformation);
}

TEST_CASE("g2o-format round trip") {
  Rng rng(8);
  const Matrix6d info = diagonal_information(0.05, 0.5 * kRad);
  Chain chain = make_drifted_chain(10, 0.5, rng, 0.01, 0.05 * kRad);
  MapGraph graph(0, 0);
  for (int k = 0; k < 10; ++k) graph.add_keyframe_node(make_kf(0, k, chain.odom[k]), 2, info);
  graph.add_loop_edge({0, 0}, {0, 9}, compose(inverse(chain.gt[0]), chain.gt[9]),
                      diagonal_information(0.01, 0.1 * kRad));

  const std::string path = "/tmp/cslam_test_graph.g2o";
  save_g2o(graph, path);
  const MapGraph loaded = load_g2o(path);
  CHECK(loaded.num_nodes() == graph.num_nodes());
  CHECK(loaded.edges().size() == graph.edges().size());
  int loops = 0;
  for (const auto& e : loaded.edges()) {
    if (e.kind == EdgeKind::Loop) {
      ++loops;
      CHECK(e.robust);
    }
  }
  CHECK(loops == 1);

  // Loaded graph optimizes to the same states as the original.
  MapGraph original = graph;
  original.optimize();
  MapGraph reloaded = loaded;
  reloaded.optimize();
  const auto ids = original.sorted_node_ids();
  const auto ids2 = reloaded.sorted_node_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK((original.node(ids[i]).T_ws.p - reloaded.node(ids2[i]).T_ws.p).norm() < 1e-6);
  }
}
