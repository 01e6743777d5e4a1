#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cslam/keyframe.hpp"
#include "cslam/matching.hpp"
#include "cslam/pose_graph.hpp"
#include "cslam/rng.hpp"

namespace cslam {

// Conceptual multi-camera system: a reference keyframe plus temporal
// neighbors, with extrinsics taken from odometry. members[0] is the
// reference with identity extrinsics.
struct RigMember {
  KfId kf;
  Pose T_ref_member;  // member camera expressed in the reference camera frame
  const Keyframe* keyframe = nullptr;
};

struct MultiCameraRig {
  KfId reference;
  std::vector<RigMember> members;
};

// Builds a rig around center_kf using its nearest temporal neighbors in the
// agent's keyframe sequence (predecessor first, then successor, then farther
// out). Throws InsufficientNeighbors when the trajectory is too short.
MultiCameraRig build_rig(const MapGraph& map, const KeyframeStore& store, const KfId& center_kf,
                         int n_neighbors);

// ---------------------------------------------------------------------------
// Central two-view pre-filter

struct PrefilterConfig {
  double threshold_deg = 0.35;  // angular Sampson inlier threshold
  int min_inliers = 30;
  int max_iterations = 1000;
  double confidence = 0.99;
};

struct PrefilterResult {
  bool accepted = false;
  std::vector<int> inlier_indices;  // into the input correspondence set
  int iterations = 0;
};

// First-order angular distance of a ray pair to the epipolar constraint
// manifold of E: |f_c^T E f_q| / sqrt(|E f_q|^2 + |E^T f_c|^2).
double epipolar_sampson_angle(const BearingRay& ray_q, const BearingRay& ray_c,
                              const Eigen::Matrix3d& E);

// Essential matrix from >= 8 ray correspondences (linear nullspace solve,
// singular values projected to (1,1,0)). Throws DegenerateConfiguration.
Eigen::Matrix3d solve_essential_8pt(const std::vector<BearingRay>& rays_q,
                                    const std::vector<BearingRay>& rays_c);

// 2D-2D RANSAC on bearing rays of one camera pair. Accepted only with
// >= min_inliers inliers; a failed set rejects the whole candidate early.
PrefilterResult central_prefilter(const std::vector<Correspondence>& set,
                                  const std::vector<BearingRay>& rays_q,
                                  const std::vector<BearingRay>& rays_c,
                                  const PrefilterConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Generalized relative pose

// Generalized epipolar residual d_c.(E d_q) + d_c.(R m_q) + m_c.(R d_q) with
// E = [t]x R of T_cq; zero iff the two rig-frame lines intersect under T_cq.
double generalized_epipolar_residual(const PluckerLine& l_q, const PluckerLine& l_c,
                                     const Pose& T_cq);

struct RayPairing {
  PluckerLine line_q;  // in the query rig frame
  PluckerLine line_c;  // in the candidate rig frame
  int camera_pair = 0;
};

// Linear 17-point solver for the transform T_cq between two generalized
// cameras. Requires >= 17 correspondences spanning >= 2 camera pairs.
// Returns the recovered pose and its flipped-translation alternative.
// Throws DegenerateConfiguration on rank deficiency.
std::vector<Pose> solve_17pt(const std::vector<RayPairing>& correspondences);

// Rig data needed by the geometric stages, detached from live keyframes so
// verification jobs can be serialized and replayed.
struct RigGeometry {
  KfId reference;
  std::vector<KfId> member_ids;
  std::vector<Pose> extrinsics;                // member camera in reference frame
  std::vector<std::vector<BearingRay>> rays;   // per member, per keypoint
};

RigGeometry geometry_of(const MultiCameraRig& rig);

// ---------------------------------------------------------------------------
// Stratified 17-point RANSAC over the pre-filtered sets

struct RansacConfig {
  double threshold_deg = 0.35;
  int min_inliers = 100;
  int max_iterations = 500;
  double confidence = 0.99;
  int min_per_set = 2;  // stratification: draws per nonempty set
};

// One pooled correspondence, tagged with its set for stratified sampling and
// carrying both the raw camera-frame rays (for the per-pair inlier test) and
// the rig-frame Plücker lines (for the solver).
struct PooledCorrespondence {
  int set_index = 0;
  int q_member = 0;
  int c_member = 0;
  int kp_q = 0;
  int kp_c = 0;
  BearingRay ray_q;
  BearingRay ray_c;
  PluckerLine line_q;
  PluckerLine line_c;
};

std::vector<PooledCorrespondence> pool_correspondences(
    const RigGeometry& rig_q, const RigGeometry& rig_c, const std::vector<PairMatches>& sets,
    const std::vector<std::vector<int>>& set_inliers);

struct RelPoseResult {
  bool success = false;
  Pose T_cq;
  std::vector<int> inlier_indices;  // into the pooled correspondences
  std::vector<int> per_set_inliers;
  int iterations = 0;
  std::string failure;
};

// Inlier test used by the RANSAC: per-camera-pair central epipolar angle
// induced by T_cq composed with the rig extrinsics.
double induced_pair_angle(const PooledCorrespondence& corr, const RigGeometry& rig_q,
                          const RigGeometry& rig_c, const Pose& T_cq);

RelPoseResult ransac_17pt(const std::vector<PooledCorrespondence>& pool, int num_sets,
                          const RigGeometry& rig_q, const RigGeometry& rig_c,
                          const RansacConfig& config, Rng& rng);

// Damped Gauss-Newton polish of T_cq on the signed per-pair Sampson angles
// of the given correspondences. The linear solver is algebraic and noise
// soaks into its redundant parameters; this brings the pose to the geometric
// optimum the inlier test actually measures.
Pose refine_relative_pose(const std::vector<PooledCorrespondence>& pool,
                          const std::vector<int>& inlier_indices, const RigGeometry& rig_q,
                          const RigGeometry& rig_c, const Pose& T_init, int max_iterations = 10);

// ---------------------------------------------------------------------------
// Sampling covariance of the accepted transform

struct CovarianceConfig {
  int n_samples = 30;
  double eigenvalue_floor = 1e-6;
  int min_successes = 3;
  // A sampled solution counts as a successful solve only if it explains at
  // least this fraction of the inliers; near-degenerate 17-point draws
  // otherwise dominate the spread with arbitrarily wild poses.
  double min_support = 0.5;
  double support_threshold_deg = 0.35;
  // Scale the minimal-sample spread down to the n-inlier re-fit that the
  // constraint actually carries (variance ratio 17/n).
  bool scale_to_refit = true;
};

struct CovarianceEstimate {
  Matrix6d covariance = Matrix6d::Zero();   // floored
  Matrix6d information = Matrix6d::Zero();  // inverse of the floored covariance
  double raw_trace = 0.0;                   // before flooring
  int samples_used = 0;
};

// Repeated 17-point solves on random inlier subsets; deviation from the
// reference T_star is expressed as [dp; 2 vec(dq)] of dT = T_star^-1 T_k.
// Throws DegenerateSamples if fewer than min_successes solves succeed.
CovarianceEstimate estimate_covariance(const std::vector<PooledCorrespondence>& inliers,
                                       int num_sets, const RigGeometry& rig_q,
                                       const RigGeometry& rig_c, const Pose& T_star,
                                       const CovarianceConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Full geometric verification of one place-recognition candidate

struct LoopConstraint {
  KfId query_kf;
  KfId candidate_kf;
  Pose T_cq;  // query sensor frame expressed in the candidate sensor frame
  Matrix6d information = Matrix6d::Identity();
  int inliers = 0;
  double covariance_trace = 0.0;
};

struct VerificationConfig {
  MatcherConfig matcher;
  PrefilterConfig prefilter;
  RansacConfig ransac;
  CovarianceConfig covariance;
};

struct StageTimings {
  double matching_ms = 0.0;
  double prefilter_ms = 0.0;
  double ransac_ms = 0.0;
  double covariance_ms = 0.0;
  double total_ms = 0.0;
};

struct VerificationOutcome {
  enum class Status { Accepted, PrefilterRejected, RansacRejected, CovarianceDegenerate };
  Status status = Status::PrefilterRejected;
  LoopConstraint constraint;  // valid when status == Accepted
  std::vector<int> prefilter_inliers;  // per set
  RelPoseResult rel_pose;
  StageTimings timings;

  bool accepted() const { return status == Status::Accepted; }
};

// Runs matching + prefilter + RANSAC + covariance on live rigs.
VerificationOutcome verify_candidate(const MultiCameraRig& rig_q, const MultiCameraRig& rig_c,
                                     const VerificationConfig& config, std::uint64_t seed);

// Geometric stages only, on detached rig data and precomputed match sets.
VerificationOutcome verify_geometry(const RigGeometry& rig_q, const RigGeometry& rig_c,
                                    const std::vector<PairMatches>& sets,
                                    const VerificationConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Self-contained verification job dumps (replayed by the solve-loop tool)

struct VerificationJob {
  std::uint64_t seed = 0;
  VerificationConfig config;
  RigGeometry rig_q;
  RigGeometry rig_c;
  std::vector<PairMatches> sets;
};

VerificationJob make_job(const MultiCameraRig& rig_q, const MultiCameraRig& rig_c,
                         const std::vector<PairMatches>& sets, const VerificationConfig& config,
                         std::uint64_t seed);

// Runs prefilter + RANSAC + covariance on the stored data. Deterministic for
// the stored seed.
VerificationOutcome replay_job(const VerificationJob& job);

void save_job(const VerificationJob& job, const std::string& path);
VerificationJob load_job(const std::string& path);

}  // namespace cslam
