#pragma once

// Shared synthetic-scene helpers for the geometric tests: random poses,
// random rigs, and forward-generated ray correspondences with known
// ground-truth relative pose.

#include <vector>

#include "cslam/geometry.hpp"
#include "cslam/relative_pose.hpp"
#include "cslam/rng.hpp"

namespace cslam::testing {

inline Pose random_pose(Rng& rng, double max_angle_rad, double max_translation) {
  const Eigen::Vector3d axis = rng.unit_vec3();
  const double angle = rng.uniform(-max_angle_rad, max_angle_rad);
  return Pose(exp_so3(angle * axis), rng.gaussian_vec3(max_translation / 2.0));
}

// Two-rig scene: members with odometry-scale baselines, a ground-truth
// T_cq, and landmark-generated ray pairings tagged by camera pair.
struct RigScene {
  RigGeometry rig_q;
  RigGeometry rig_c;
  Pose T_cq;  // ground truth
  std::vector<PooledCorrespondence> pool;
};

// Generates `per_pair` correspondences for every (q_member, c_member) pair
// from landmarks placed in front of both rigs. Optional pixel-noise-like
// angular perturbation sigma_rad is applied to both rays of a pair.
inline RigScene make_rig_scene(Rng& rng, int members_q = 2, int members_c = 3, int per_pair = 10,
                               double sigma_rad = 0.0, double scene_scale = 5.0) {
  RigScene scene;
  scene.rig_q.reference = {0, 100};
  scene.rig_c.reference = {1, 200};

  const auto perturbed = [&rng](const Eigen::Vector3d& d, double sigma) -> Eigen::Vector3d {
    if (sigma <= 0.0) return d;
    const Eigen::Vector3d axis = rng.unit_vec3();
    const Eigen::Vector3d orth = (axis - axis.dot(d) * d).normalized();
    return (exp_so3(rng.gaussian(sigma) * orth.cross(d).normalized()) * d).normalized();
  };

  for (int m = 0; m < members_q; ++m) {
    scene.rig_q.member_ids.push_back({0, 100 + static_cast<std::uint64_t>(m)});
    scene.rig_q.extrinsics.push_back(m == 0 ? Pose::identity() : random_pose(rng, 0.2, 0.6));
    scene.rig_q.rays.emplace_back();
  }
  for (int m = 0; m < members_c; ++m) {
    scene.rig_c.member_ids.push_back({1, 200 + static_cast<std::uint64_t>(m)});
    scene.rig_c.extrinsics.push_back(m == 0 ? Pose::identity() : random_pose(rng, 0.2, 0.6));
    scene.rig_c.rays.emplace_back();
  }
  // Query rig observes from near the origin; candidate rig from a clearly
  // distinct viewpoint so the translation is observable at metric scale.
  scene.T_cq = Pose(exp_so3(rng.uniform(0.2, 0.8) * rng.unit_vec3()),
                    rng.unit_vec3() * rng.uniform(0.5, 0.2 + scene_scale / 2.0));

  int set_index = 0;
  for (int qm = 0; qm < members_q; ++qm) {
    for (int cm = 0; cm < members_c; ++cm) {
      for (int i = 0; i < per_pair; ++i) {
        // Landmark in front of the query member camera.
        const Eigen::Vector3d dir_cam =
            (Eigen::Vector3d(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 1.0)).normalized();
        const double depth = rng.uniform(0.3 * scene_scale, 1.5 * scene_scale);
        const Eigen::Vector3d X_qrig = scene.rig_q.extrinsics[qm].apply(dir_cam * depth);
        const Eigen::Vector3d X_ccam =
            inverse(scene.rig_c.extrinsics[cm]).apply(scene.T_cq.apply(X_qrig));
        if (X_ccam.z() < 0.1) {
          --i;  // behind the candidate camera, resample
          continue;
        }
        PooledCorrespondence pc;
        pc.set_index = set_index;
        pc.q_member = qm;
        pc.c_member = cm;
        pc.kp_q = static_cast<int>(scene.rig_q.rays[qm].size());
        pc.kp_c = static_cast<int>(scene.rig_c.rays[cm].size());
        pc.ray_q = perturbed(dir_cam, sigma_rad);
        pc.ray_c = perturbed(X_ccam.normalized(), sigma_rad);
        pc.line_q = plucker_from_camera(pc.ray_q, scene.rig_q.extrinsics[qm]);
        pc.line_c = plucker_from_camera(pc.ray_c, scene.rig_c.extrinsics[cm]);
        scene.rig_q.rays[qm].push_back(pc.ray_q);
        scene.rig_c.rays[cm].push_back(pc.ray_c);
        scene.pool.push_back(pc);
      }
      ++set_index;
    }
  }
  return scene;
}

inline std::vector<RayPairing> pairings_of_scene(const RigScene& scene) {
  std::vector<RayPairing> out;
  out.reserve(scene.pool.size());
  for (const PooledCorrespondence& c : scene.pool) {
    out.push_back({c.line_q, c.line_c, c.set_index});
  }
  return out;
}

}  // namespace cslam::testing
