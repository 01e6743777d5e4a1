#include "cslam/relative_pose.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "cslam/errors.hpp"

namespace cslam {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Adaptive RANSAC iteration bound for inlier ratio w and sample size m.
int adaptive_iterations(double w, int m, double confidence, int cap) {
  if (w <= 0.0) return cap;
  const double p_clean = std::pow(w, m);
  if (p_clean >= 1.0) return 0;
  if (p_clean < 1e-12) return cap;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - p_clean);
  if (!std::isfinite(n) || n >= static_cast<double>(cap)) return cap;
  return std::max(0, static_cast<int>(std::ceil(n)));
}

}  // namespace

MultiCameraRig build_rig(const MapGraph& map, const KeyframeStore& store, const KfId& center_kf,
                         int n_neighbors) {
  if (!map.has_node(center_kf)) throw UnknownKeyframe("rig center not in map");
  const auto& seq = map.agent_sequence(center_kf.agent);
  const auto pos = std::find(seq.begin(), seq.end(), center_kf);
  if (pos == seq.end()) throw UnknownKeyframe("rig center not in agent sequence");
  const std::ptrdiff_t center_idx = pos - seq.begin();
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(seq.size());

  // Nearest temporal neighbors, predecessor preferred at each distance.
  std::vector<KfId> neighbors;
  for (std::ptrdiff_t d = 1; static_cast<int>(neighbors.size()) < n_neighbors && d < len; ++d) {
    if (center_idx - d >= 0) neighbors.push_back(seq[center_idx - d]);
    if (static_cast<int>(neighbors.size()) >= n_neighbors) break;
    if (center_idx + d < len) neighbors.push_back(seq[center_idx + d]);
  }
  if (static_cast<int>(neighbors.size()) < n_neighbors) {
    throw InsufficientNeighbors("agent trajectory too short to build rig");
  }

  MultiCameraRig rig;
  rig.reference = center_kf;
  const Keyframe& center = store.at(center_kf);
  rig.members.push_back({center_kf, Pose::identity(), &center});
  const Pose T_w_center_inv = inverse(center.T_ws_odom);
  for (const KfId& n : neighbors) {
    const Keyframe& kf = store.at(n);
    rig.members.push_back({n, compose(T_w_center_inv, kf.T_ws_odom), &kf});
  }
  return rig;
}

RigGeometry geometry_of(const MultiCameraRig& rig) {
  RigGeometry g;
  g.reference = rig.reference;
  for (const RigMember& m : rig.members) {
    g.member_ids.push_back(m.kf);
    g.extrinsics.push_back(m.T_ref_member);
    g.rays.push_back(m.keyframe->rays);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Central two-view pre-filter

double epipolar_sampson_angle(const BearingRay& ray_q, const BearingRay& ray_c,
                              const Eigen::Matrix3d& E) {
  const Eigen::Vector3d Efq = E * ray_q;
  const Eigen::Vector3d Etfc = E.transpose() * ray_c;
  const double num = std::abs(ray_c.dot(Efq));
  const double denom = std::sqrt(Efq.squaredNorm() + Etfc.squaredNorm());
  if (denom < 1e-12) return num < 1e-12 ? 0.0 : std::numbers::pi / 2.0;
  return std::asin(std::min(1.0, num / denom));
}

Eigen::Matrix3d solve_essential_8pt(const std::vector<BearingRay>& rays_q,
                                    const std::vector<BearingRay>& rays_c) {
  const int n = static_cast<int>(rays_q.size());
  if (n < 8 || rays_c.size() != rays_q.size()) {
    throw DegenerateConfiguration("8-point solve needs >= 8 ray pairs");
  }
  Eigen::MatrixXd A(n, 9);
  for (int i = 0; i < n; ++i) {
    const BearingRay& fq = rays_q[i];
    const BearingRay& fc = rays_c[i];
    for (int b = 0; b < 3; ++b) {
      for (int a = 0; a < 3; ++a) {
        A(i, 3 * b + a) = fc(a) * fq(b);  // coefficient of E(a,b), column-major
      }
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) < 1e-9 * sv(0)) {
    throw DegenerateConfiguration("rank-deficient 8-point system");
  }
  const Eigen::VectorXd v = svd.matrixV().col(8);
  const Eigen::Matrix3d E0 = Eigen::Map<const Eigen::Matrix3d>(v.data());
  // Project to the essential manifold: singular values (1, 1, 0).
  Eigen::JacobiSVD<Eigen::Matrix3d> esvd(E0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s(1.0, 1.0, 0.0);
  return esvd.matrixU() * s.asDiagonal() * esvd.matrixV().transpose();
}

PrefilterResult central_prefilter(const std::vector<Correspondence>& set,
                                  const std::vector<BearingRay>& rays_q,
                                  const std::vector<BearingRay>& rays_c,
                                  const PrefilterConfig& config, Rng& rng) {
  PrefilterResult result;
  const int n = static_cast<int>(set.size());
  if (n < 8) return result;

  std::vector<BearingRay> fq(n), fc(n);
  for (int i = 0; i < n; ++i) {
    fq[i] = rays_q[set[i].kp_a];
    fc[i] = rays_c[set[i].kp_b];
  }
  const double thresh = config.threshold_deg * kDegToRad;

  const auto count_inliers = [&](const Eigen::Matrix3d& E, std::vector<int>& inliers) {
    inliers.clear();
    for (int i = 0; i < n; ++i) {
      if (epipolar_sampson_angle(fq[i], fc[i], E) < thresh) inliers.push_back(i);
    }
  };

  std::vector<int> best_inliers;
  std::vector<int> inliers;
  std::vector<BearingRay> sq(8), sc(8);
  int needed = config.max_iterations;
  int iter = 0;
  for (; iter < needed && iter < config.max_iterations; ++iter) {
    const std::vector<int> idx = rng.sample_without_replacement(n, 8);
    for (int k = 0; k < 8; ++k) {
      sq[k] = fq[idx[k]];
      sc[k] = fc[idx[k]];
    }
    Eigen::Matrix3d E;
    try {
      E = solve_essential_8pt(sq, sc);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    count_inliers(E, inliers);
    if (inliers.size() > best_inliers.size()) {
      best_inliers = inliers;
      needed = adaptive_iterations(static_cast<double>(best_inliers.size()) / n, 8,
                                   config.confidence, config.max_iterations);
      if (static_cast<int>(best_inliers.size()) == n) {
        ++iter;
        break;
      }
    }
  }
  result.iterations = iter;

  // Re-fit on the consensus set and re-count once.
  if (static_cast<int>(best_inliers.size()) >= 8) {
    std::vector<BearingRay> rq, rc;
    rq.reserve(best_inliers.size());
    rc.reserve(best_inliers.size());
    for (int i : best_inliers) {
      rq.push_back(fq[i]);
      rc.push_back(fc[i]);
    }
    try {
      const Eigen::Matrix3d E = solve_essential_8pt(rq, rc);
      count_inliers(E, inliers);
      if (inliers.size() > best_inliers.size()) best_inliers = inliers;
    } catch (const DegenerateConfiguration&) {
    }
  }

  result.inlier_indices = std::move(best_inliers);
  result.accepted = static_cast<int>(result.inlier_indices.size()) >= config.min_inliers;
  return result;
}

// ---------------------------------------------------------------------------
// Generalized relative pose

double generalized_epipolar_residual(const PluckerLine& l_q, const PluckerLine& l_c,
                                     const Pose& T_cq) {
  const Eigen::Matrix3d R = T_cq.rotation();
  const Eigen::Matrix3d E = skew(T_cq.p) * R;
  return l_c.d.dot(E * l_q.d) + l_c.d.dot(R * l_q.m) + l_c.m.dot(R * l_q.d);
}

std::vector<Pose> solve_17pt(const std::vector<RayPairing>& correspondences) {
  const int n = static_cast<int>(correspondences.size());
  if (n < 17) throw DegenerateConfiguration("17-point solve needs >= 17 correspondences");
  {
    std::set<int> pairs;
    for (const RayPairing& c : correspondences) pairs.insert(c.camera_pair);
    if (pairs.size() < 2) {
      throw DegenerateConfiguration(
          "all correspondences share one camera pair; translation scale unobservable");
    }
  }

  // One generalized epipolar equation per correspondence, linear in the 18
  // entries of (E, R):
  //   d_c^T E d_q + d_c^T R m_q + m_c^T R d_q = 0
  Eigen::MatrixXd A(n, 18);
  for (int i = 0; i < n; ++i) {
    const RayPairing& c = correspondences[i];
    const Eigen::Vector3d& dq = c.line_q.d;
    const Eigen::Vector3d& mq = c.line_q.m;
    const Eigen::Vector3d& dc = c.line_c.d;
    const Eigen::Vector3d& mc = c.line_c.m;
    for (int b = 0; b < 3; ++b) {
      for (int a = 0; a < 3; ++a) {
        A(i, 3 * b + a) = dc(a) * dq(b);                      // vec(E), column-major
        A(i, 9 + 3 * b + a) = dc(a) * mq(b) + mc(a) * dq(b);  // vec(R)
      }
    }
  }

  Eigen::VectorXd v;
  Eigen::VectorXd sv;
  if (n <= 48) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    sv = svd.singularValues();
    v = svd.matrixV().col(17);
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    sv = svd.singularValues();
    v = svd.matrixV().col(17);
  }
  // Rank must be 17 for a one-dimensional nullspace.
  if (sv(16) < 1e-9 * sv(0)) {
    throw DegenerateConfiguration("rank-deficient 17-point system");
  }

  const Eigen::Matrix3d E_raw = Eigen::Map<const Eigen::Matrix3d>(v.data());
  const Eigen::Matrix3d R_raw = Eigen::Map<const Eigen::Matrix3d>(v.data() + 9);

  // The nullspace vector is known up to sign and scale: pick the sign that
  // makes the rotation block project to det +1, and the scale that gives it
  // unit singular values.
  Eigen::JacobiSVD<Eigen::Matrix3d> rsvd(R_raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d UVt = rsvd.matrixU() * rsvd.matrixV().transpose();
  const double sign = UVt.determinant() >= 0.0 ? 1.0 : -1.0;
  const Eigen::Matrix3d R = sign * UVt;
  const double scale = 3.0 / rsvd.singularValues().sum();
  const Eigen::Matrix3d E = sign * scale * E_raw;

  // [t]x is the skew-symmetric part of E R^T.
  const Eigen::Matrix3d ERt = E * R.transpose();
  const Eigen::Matrix3d S = 0.5 * (ERt - ERt.transpose());
  const Eigen::Vector3d t(S(2, 1), S(0, 2), S(1, 0));

  const Eigen::Quaterniond q(R);
  return {Pose(q, t), Pose(q, -t)};
}

// ---------------------------------------------------------------------------
// Stratified 17-point RANSAC

std::vector<PooledCorrespondence> pool_correspondences(
    const RigGeometry& rig_q, const RigGeometry& rig_c, const std::vector<PairMatches>& sets,
    const std::vector<std::vector<int>>& set_inliers) {
  std::vector<PooledCorrespondence> pool;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const PairMatches& pm = sets[s];
    const auto& rays_q = rig_q.rays[pm.q_member];
    const auto& rays_c = rig_c.rays[pm.c_member];
    const Pose& ext_q = rig_q.extrinsics[pm.q_member];
    const Pose& ext_c = rig_c.extrinsics[pm.c_member];
    for (int idx : set_inliers[s]) {
      const Correspondence& m = pm.matches[idx];
      PooledCorrespondence pc;
      pc.set_index = static_cast<int>(s);
      pc.q_member = pm.q_member;
      pc.c_member = pm.c_member;
      pc.kp_q = m.kp_a;
      pc.kp_c = m.kp_b;
      pc.ray_q = rays_q[m.kp_a];
      pc.ray_c = rays_c[m.kp_b];
      pc.line_q = plucker_from_camera(pc.ray_q, ext_q);
      pc.line_c = plucker_from_camera(pc.ray_c, ext_c);
      pool.push_back(pc);
    }
  }
  return pool;
}

double induced_pair_angle(const PooledCorrespondence& corr, const RigGeometry& rig_q,
                          const RigGeometry& rig_c, const Pose& T_cq) {
  const Pose T_pair = compose(inverse(rig_c.extrinsics[corr.c_member]),
                              compose(T_cq, rig_q.extrinsics[corr.q_member]));
  const Eigen::Matrix3d E = skew(T_pair.p) * T_pair.rotation();
  return epipolar_sampson_angle(corr.ray_q, corr.ray_c, E);
}

namespace {

// Essential matrix of each (q_member, c_member) camera pair induced by T_cq,
// precomputed once per candidate pose.
struct PairEssentials {
  std::vector<Eigen::Matrix3d> E;
  std::size_t n_c = 0;

  PairEssentials(const RigGeometry& rig_q, const RigGeometry& rig_c, const Pose& T_cq) {
    n_c = rig_c.extrinsics.size();
    E.resize(rig_q.extrinsics.size() * n_c);
    for (std::size_t qm = 0; qm < rig_q.extrinsics.size(); ++qm) {
      for (std::size_t cm = 0; cm < n_c; ++cm) {
        const Pose T_pair =
            compose(inverse(rig_c.extrinsics[cm]), compose(T_cq, rig_q.extrinsics[qm]));
        E[qm * n_c + cm] = skew(T_pair.p) * T_pair.rotation();
      }
    }
  }

  double angle(const PooledCorrespondence& corr) const {
    return epipolar_sampson_angle(corr.ray_q, corr.ray_c, E[corr.q_member * n_c + corr.c_member]);
  }
};

// Draws `per_set` indices from every nonempty set and tops up to `total`
// uniformly from the remaining pool.
std::vector<int> stratified_sample(const std::vector<std::vector<int>>& by_set, int pool_size,
                                   int per_set, int total, Rng& rng) {
  std::vector<char> taken(pool_size, 0);
  std::vector<int> sample;
  sample.reserve(total);
  for (const auto& members : by_set) {
    if (members.empty()) continue;
    const int k = std::min<int>(per_set, static_cast<int>(members.size()));
    for (int pick : rng.sample_without_replacement(static_cast<int>(members.size()), k)) {
      const int idx = members[pick];
      taken[idx] = 1;
      sample.push_back(idx);
    }
  }
  std::vector<int> rest;
  rest.reserve(pool_size);
  for (int i = 0; i < pool_size; ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  while (static_cast<int>(sample.size()) < total && !rest.empty()) {
    const int r = rng.uniform_int(static_cast<int>(rest.size()));
    sample.push_back(rest[r]);
    rest[r] = rest.back();
    rest.pop_back();
  }
  return sample;
}

std::vector<RayPairing> pairings_of(const std::vector<PooledCorrespondence>& pool,
                                    const std::vector<int>& indices) {
  std::vector<RayPairing> out;
  out.reserve(indices.size());
  for (int i : indices) {
    const PooledCorrespondence& c = pool[i];
    out.push_back({c.line_q, c.line_c, c.set_index});
  }
  return out;
}

}  // namespace

RelPoseResult ransac_17pt(const std::vector<PooledCorrespondence>& pool, int num_sets,
                          const RigGeometry& rig_q, const RigGeometry& rig_c,
                          const RansacConfig& config, Rng& rng) {
  RelPoseResult result;
  const int n = static_cast<int>(pool.size());
  if (n < 17) {
    result.failure = "fewer than 17 pooled correspondences";
    return result;
  }
  std::vector<std::vector<int>> by_set(num_sets);
  for (int i = 0; i < n; ++i) by_set[pool[i].set_index].push_back(i);
  int nonempty = 0;
  for (const auto& s : by_set) {
    if (!s.empty()) ++nonempty;
  }
  int per_set = config.min_per_set;
  while (per_set > 1 && per_set * nonempty > 17) --per_set;

  const double thresh = config.threshold_deg * kDegToRad;
  const auto count_inliers = [&](const Pose& T_cq, std::vector<int>& inliers) {
    const PairEssentials pe(rig_q, rig_c, T_cq);
    inliers.clear();
    for (int i = 0; i < n; ++i) {
      if (pe.angle(pool[i]) < thresh) inliers.push_back(i);
    }
  };

  std::vector<int> best_inliers;
  Pose best_pose;
  std::vector<int> inliers;
  int needed = config.max_iterations;
  int iter = 0;
  for (; iter < needed && iter < config.max_iterations; ++iter) {
    const std::vector<int> sample = stratified_sample(by_set, n, per_set, 17, rng);
    if (static_cast<int>(sample.size()) < 17) break;
    std::vector<Pose> candidates;
    try {
      candidates = solve_17pt(pairings_of(pool, sample));
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    for (const Pose& T : candidates) {
      count_inliers(T, inliers);
      if (inliers.size() > best_inliers.size()) {
        best_inliers = inliers;
        best_pose = T;
        needed = adaptive_iterations(static_cast<double>(best_inliers.size()) / n, 17,
                                     config.confidence, config.max_iterations);
      }
    }
    if (static_cast<int>(best_inliers.size()) == n) {
      ++iter;
      break;
    }
  }
  result.iterations = iter;

  if (static_cast<int>(best_inliers.size()) < config.min_inliers) {
    result.failure = "best model has " + std::to_string(best_inliers.size()) + " inliers, need " +
                     std::to_string(config.min_inliers);
    return result;
  }

  // Re-estimate on the full consensus set; keep the refit only if it does
  // not lose inliers (the acceptance gate applies to what is returned).
  try {
    const std::vector<Pose> refits = solve_17pt(pairings_of(pool, best_inliers));
    for (const Pose& T : refits) {
      count_inliers(T, inliers);
      if (inliers.size() >= best_inliers.size()) {
        best_inliers = inliers;
        best_pose = T;
      }
    }
  } catch (const DegenerateConfiguration&) {
  }

  // Geometric polish: the algebraic solution is unbiased but noisy.
  {
    const Pose refined = refine_relative_pose(pool, best_inliers, rig_q, rig_c, best_pose);
    count_inliers(refined, inliers);
    if (inliers.size() >= best_inliers.size()) {
      best_inliers = inliers;
      best_pose = refined;
    }
  }

  result.success = true;
  result.T_cq = best_pose;
  result.inlier_indices = best_inliers;
  result.per_set_inliers.assign(num_sets, 0);
  for (int i : best_inliers) ++result.per_set_inliers[pool[i].set_index];
  return result;
}

Pose refine_relative_pose(const std::vector<PooledCorrespondence>& pool,
                          const std::vector<int>& inlier_indices, const RigGeometry& rig_q,
                          const RigGeometry& rig_c, const Pose& T_init, int max_iterations) {
  const int n = static_cast<int>(inlier_indices.size());
  if (n < 17) return T_init;

  // Signed Sampson angle of every inlier under a candidate pose.
  const auto residuals = [&](const Pose& T, Eigen::VectorXd& r) {
    const PairEssentials pe(rig_q, rig_c, T);
    for (int k = 0; k < n; ++k) {
      const PooledCorrespondence& c = pool[inlier_indices[k]];
      const Eigen::Matrix3d& E = pe.E[c.q_member * pe.n_c + c.c_member];
      const Eigen::Vector3d Efq = E * c.ray_q;
      const Eigen::Vector3d Etfc = E.transpose() * c.ray_c;
      const double denom = std::sqrt(Efq.squaredNorm() + Etfc.squaredNorm());
      r(k) = denom < 1e-12 ? 0.0 : c.ray_c.dot(Efq) / denom;
    }
  };
  const auto plus = [](const Pose& T, const Vector6d& step) {
    Pose out = T;
    out.p += step.head<3>();
    out.q = T.q * exp_so3(step.tail<3>());
    out.normalize();
    return out;
  };

  Pose T = T_init;
  Eigen::VectorXd r(n), r_plus(n), r_minus(n);
  Eigen::MatrixXd J(n, 6);
  residuals(T, r);
  double cost = r.squaredNorm();
  double lambda = 1e-6;
  // Trust region on translation: near-central rigs leave the scale of t
  // almost unobserved, and an unconstrained step would drift along that
  // flat direction without the linear solution's algebraic anchor.
  const double t_ref = std::max(T_init.p.norm(), 0.5);
  const double step_cap = 0.10 * t_ref;
  const double total_cap = 0.30 * t_ref;
  for (int iter = 0; iter < max_iterations; ++iter) {
    const double h = 1e-7;
    for (int d = 0; d < 6; ++d) {
      Vector6d step = Vector6d::Zero();
      step(d) = h;
      residuals(plus(T, step), r_plus);
      residuals(plus(T, -step), r_minus);
      J.col(d) = (r_plus - r_minus) / (2.0 * h);
    }
    const Matrix6d H = J.transpose() * J;
    const Vector6d g = J.transpose() * r;
    bool stepped = false;
    for (int attempt = 0; attempt < 6 && !stepped; ++attempt) {
      Matrix6d H_damped = H;
      H_damped.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
      Vector6d delta = H_damped.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const double step_norm = delta.head<3>().norm();
      if (step_norm > step_cap) delta *= step_cap / step_norm;
      const Pose T_new = plus(T, delta);
      if ((T_new.p - T_init.p).norm() > total_cap) {
        lambda *= 10.0;
        continue;
      }
      residuals(T_new, r_plus);
      const double new_cost = r_plus.squaredNorm();
      if (new_cost < cost) {
        T = T_new;
        r = r_plus;
        const double drop = cost - new_cost;
        cost = new_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
        if (drop < 1e-14 * std::max(cost, 1e-300)) return T;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) break;
  }
  return T;
}

// ---------------------------------------------------------------------------
// Sampling covariance

CovarianceEstimate estimate_covariance(const std::vector<PooledCorrespondence>& inliers,
                                       int num_sets, const RigGeometry& rig_q,
                                       const RigGeometry& rig_c, const Pose& T_star,
                                       const CovarianceConfig& config, Rng& rng) {
  const int n = static_cast<int>(inliers.size());
  if (n < 17) throw DegenerateSamples("fewer than 17 inliers for covariance sampling");
  std::vector<std::vector<int>> by_set(num_sets);
  for (int i = 0; i < n; ++i) by_set[inliers[i].set_index].push_back(i);
  int nonempty = 0;
  for (const auto& s : by_set) {
    if (!s.empty()) ++nonempty;
  }
  int per_set = 2;
  while (per_set > 1 && per_set * nonempty > 17) --per_set;

  const auto deviation = [&T_star](const Pose& T) {
    const Pose dT = compose(inverse(T_star), T);
    Vector6d d;
    d.head<3>() = dT.p;
    d.tail<3>() = 2.0 * dT.q.vec();  // dT.q is canonical (w >= 0)
    return d;
  };

  // A sampled transformation only counts as solved if it explains the
  // consensus set; otherwise near-degenerate 17-point draws produce
  // arbitrarily wild poses that swamp the spread.
  const double support_thresh = config.support_threshold_deg * kDegToRad;
  const int min_support = static_cast<int>(std::ceil(config.min_support * n));
  const auto support = [&](const Pose& T) {
    const PairEssentials pe(rig_q, rig_c, T);
    int count = 0;
    for (const PooledCorrespondence& c : inliers) {
      if (pe.angle(c) < support_thresh) ++count;
    }
    return count;
  };

  std::vector<Vector6d> deviations;
  deviations.reserve(config.n_samples);
  for (int k = 0; k < config.n_samples; ++k) {
    const std::vector<int> sample = stratified_sample(by_set, n, per_set, 17, rng);
    if (static_cast<int>(sample.size()) < 17) continue;
    std::vector<Pose> candidates;
    try {
      candidates = solve_17pt(pairings_of(inliers, sample));
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    bool supported = false;
    Vector6d best = Vector6d::Zero();
    for (const Pose& T : candidates) {
      // Polish each sampled solution on its own 17 correspondences; the raw
      // algebraic solve leaks noise into its redundant parameters.
      const Pose refined = refine_relative_pose(inliers, sample, rig_q, rig_c, T);
      if (support(refined) < min_support) continue;
      const Vector6d d = deviation(refined);
      if (!supported || d.squaredNorm() < best.squaredNorm()) best = d;
      supported = true;
    }
    if (supported) deviations.push_back(best);
  }
  if (static_cast<int>(deviations.size()) < config.min_successes) {
    throw DegenerateSamples("too few successful covariance samples");
  }

  Vector6d mean = Vector6d::Zero();
  for (const Vector6d& d : deviations) mean += d;
  mean /= static_cast<double>(deviations.size());
  Matrix6d cov = Matrix6d::Zero();
  for (const Vector6d& d : deviations) {
    const Vector6d c = d - mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(deviations.size() - 1);
  if (config.scale_to_refit) {
    // The constraint carries the all-inlier re-fit, whose variance is the
    // minimal-sample variance divided by the sample-count ratio.
    cov *= 17.0 / static_cast<double>(n);
  }

  CovarianceEstimate est;
  est.raw_trace = cov.trace();
  est.samples_used = static_cast<int>(deviations.size());

  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(cov);
  Vector6d lambda = eig.eigenvalues();
  for (int i = 0; i < 6; ++i) lambda(i) = std::max(lambda(i), config.eigenvalue_floor);
  const Matrix6d V = eig.eigenvectors();
  est.covariance = V * lambda.asDiagonal() * V.transpose();
  est.information = V * lambda.cwiseInverse().asDiagonal() * V.transpose();
  est.covariance = Matrix6d(0.5 * (est.covariance + est.covariance.transpose()));
  est.information = Matrix6d(0.5 * (est.information + est.information.transpose()));
  return est;
}

// ---------------------------------------------------------------------------
// Full candidate verification

VerificationOutcome verify_geometry(const RigGeometry& rig_q, const RigGeometry& rig_c,
                                    const std::vector<PairMatches>& sets,
                                    const VerificationConfig& config, std::uint64_t seed) {
  VerificationOutcome out;
  Rng rng(seed);
  const double t0 = now_ms();

  std::vector<std::vector<int>> set_inliers(sets.size());
  out.prefilter_inliers.assign(sets.size(), 0);
  bool all_passed = true;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const PairMatches& pm = sets[s];
    const PrefilterResult pf = central_prefilter(pm.matches, rig_q.rays[pm.q_member],
                                                 rig_c.rays[pm.c_member], config.prefilter, rng);
    out.prefilter_inliers[s] = static_cast<int>(pf.inlier_indices.size());
    set_inliers[s] = pf.inlier_indices;
    if (!pf.accepted) {
      all_passed = false;
      break;  // bad candidates are rejected early
    }
  }
  out.timings.prefilter_ms = now_ms() - t0;
  if (!all_passed) {
    out.status = VerificationOutcome::Status::PrefilterRejected;
    out.timings.total_ms = now_ms() - t0;
    return out;
  }

  const double t1 = now_ms();
  const std::vector<PooledCorrespondence> pool =
      pool_correspondences(rig_q, rig_c, sets, set_inliers);
  out.rel_pose = ransac_17pt(pool, static_cast<int>(sets.size()), rig_q, rig_c, config.ransac, rng);
  out.timings.ransac_ms = now_ms() - t1;
  if (!out.rel_pose.success) {
    out.status = VerificationOutcome::Status::RansacRejected;
    out.timings.total_ms = now_ms() - t0;
    return out;
  }

  const double t2 = now_ms();
  std::vector<PooledCorrespondence> inliers;
  inliers.reserve(out.rel_pose.inlier_indices.size());
  for (int i : out.rel_pose.inlier_indices) inliers.push_back(pool[i]);
  try {
    const CovarianceEstimate cov =
        estimate_covariance(inliers, static_cast<int>(sets.size()), rig_q, rig_c,
                            out.rel_pose.T_cq, config.covariance, rng);
    out.constraint.query_kf = rig_q.reference;
    out.constraint.candidate_kf = rig_c.reference;
    out.constraint.T_cq = out.rel_pose.T_cq;
    out.constraint.information = cov.information;
    out.constraint.inliers = static_cast<int>(out.rel_pose.inlier_indices.size());
    out.constraint.covariance_trace = cov.covariance.trace();
    out.status = VerificationOutcome::Status::Accepted;
  } catch (const DegenerateSamples&) {
    out.status = VerificationOutcome::Status::CovarianceDegenerate;
  }
  out.timings.covariance_ms = now_ms() - t2;
  out.timings.total_ms = now_ms() - t0;
  return out;
}

VerificationOutcome verify_candidate(const MultiCameraRig& rig_q, const MultiCameraRig& rig_c,
                                     const VerificationConfig& config, std::uint64_t seed) {
  const double t0 = now_ms();
  std::vector<const Keyframe*> kfs_q, kfs_c;
  for (const RigMember& m : rig_q.members) kfs_q.push_back(m.keyframe);
  for (const RigMember& m : rig_c.members) kfs_c.push_back(m.keyframe);
  const std::vector<PairMatches> sets = match_rigs(kfs_q, kfs_c, config.matcher);
  const double matching_ms = now_ms() - t0;

  VerificationOutcome out =
      verify_geometry(geometry_of(rig_q), geometry_of(rig_c), sets, config, seed);
  out.timings.matching_ms = matching_ms;
  out.timings.total_ms += matching_ms;
  return out;
}

// ---------------------------------------------------------------------------
// Job dumps

namespace {

constexpr char kJobMagic[4] = {'C', 'G', 'J', 'B'};
constexpr std::uint8_t kJobVersion = 1;

struct ByteWriter {
  std::vector<std::uint8_t> out;

  template <typename T>
  void put(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
  }
  void put_pose(const Pose& p) {
    put<double>(p.q.w());
    put<double>(p.q.x());
    put<double>(p.q.y());
    put<double>(p.q.z());
    put<double>(p.p.x());
    put<double>(p.p.y());
    put<double>(p.p.z());
  }
  void put_vec3(const Eigen::Vector3d& v) {
    put<double>(v.x());
    put<double>(v.y());
    put<double>(v.z());
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& in;
  std::size_t off = 0;

  template <typename T>
  T get() {
    if (off + sizeof(T) > in.size()) throw CorruptJobFile("truncated job file");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
  }
  Pose get_pose() {
    const double w = get<double>(), x = get<double>(), y = get<double>(), z = get<double>();
    const double px = get<double>(), py = get<double>(), pz = get<double>();
    return Pose(Eigen::Quaterniond(w, x, y, z), {px, py, pz});
  }
  Eigen::Vector3d get_vec3() {
    const double x = get<double>(), y = get<double>(), z = get<double>();
    return {x, y, z};
  }
};

void write_rig(ByteWriter& w, const RigGeometry& rig) {
  w.put<std::uint32_t>(rig.reference.agent);
  w.put<std::uint64_t>(rig.reference.seq);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(rig.member_ids.size()));
  for (std::size_t m = 0; m < rig.member_ids.size(); ++m) {
    w.put<std::uint32_t>(rig.member_ids[m].agent);
    w.put<std::uint64_t>(rig.member_ids[m].seq);
    w.put_pose(rig.extrinsics[m]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rig.rays[m].size()));
    for (const BearingRay& r : rig.rays[m]) w.put_vec3(r);
  }
}

RigGeometry read_rig(ByteReader& r) {
  RigGeometry rig;
  rig.reference.agent = r.get<std::uint32_t>();
  rig.reference.seq = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t m = 0; m < n; ++m) {
    KfId id;
    id.agent = r.get<std::uint32_t>();
    id.seq = r.get<std::uint64_t>();
    rig.member_ids.push_back(id);
    rig.extrinsics.push_back(r.get_pose());
    const auto nr = r.get<std::uint32_t>();
    std::vector<BearingRay> rays;
    rays.reserve(nr);
    for (std::uint32_t i = 0; i < nr; ++i) rays.push_back(r.get_vec3());
    rig.rays.push_back(std::move(rays));
  }
  return rig;
}

}  // namespace

VerificationJob make_job(const MultiCameraRig& rig_q, const MultiCameraRig& rig_c,
                         const std::vector<PairMatches>& sets, const VerificationConfig& config,
                         std::uint64_t seed) {
  VerificationJob job;
  job.seed = seed;
  job.config = config;
  job.rig_q = geometry_of(rig_q);
  job.rig_c = geometry_of(rig_c);
  job.sets = sets;
  return job;
}

VerificationOutcome replay_job(const VerificationJob& job) {
  return verify_geometry(job.rig_q, job.rig_c, job.sets, job.config, job.seed);
}

void save_job(const VerificationJob& job, const std::string& path) {
  ByteWriter w;
  w.out.insert(w.out.end(), kJobMagic, kJobMagic + 4);
  w.put<std::uint8_t>(kJobVersion);
  w.put<std::uint64_t>(job.seed);
  w.put<std::int32_t>(job.config.matcher.max_hamming);
  w.put<double>(job.config.prefilter.threshold_deg);
  w.put<std::int32_t>(job.config.prefilter.min_inliers);
  w.put<std::int32_t>(job.config.prefilter.max_iterations);
  w.put<double>(job.config.prefilter.confidence);
  w.put<double>(job.config.ransac.threshold_deg);
  w.put<std::int32_t>(job.config.ransac.min_inliers);
  w.put<std::int32_t>(job.config.ransac.max_iterations);
  w.put<double>(job.config.ransac.confidence);
  w.put<std::int32_t>(job.config.ransac.min_per_set);
  w.put<std::int32_t>(job.config.covariance.n_samples);
  w.put<double>(job.config.covariance.eigenvalue_floor);
  w.put<std::int32_t>(job.config.covariance.min_successes);
  write_rig(w, job.rig_q);
  write_rig(w, job.rig_c);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(job.sets.size()));
  for (const PairMatches& pm : job.sets) {
    w.put<std::int32_t>(pm.q_member);
    w.put<std::int32_t>(pm.c_member);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(pm.matches.size()));
    for (const Correspondence& m : pm.matches) {
      w.put<std::int32_t>(m.kp_a);
      w.put<std::int32_t>(m.kp_b);
      w.put<std::int32_t>(m.distance);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorruptJobFile("cannot open job file for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.out.data()),
            static_cast<std::streamsize>(w.out.size()));
  if (!out) throw CorruptJobFile("failed writing job file: " + path);
}

VerificationJob load_job(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptJobFile("cannot open job file: " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kJobMagic, 4) != 0) {
    throw CorruptJobFile("bad job file magic");
  }
  ByteReader r{bytes, 4};
  if (r.get<std::uint8_t>() != kJobVersion) throw CorruptJobFile("unsupported job file version");
  VerificationJob job;
  job.seed = r.get<std::uint64_t>();
  job.config.matcher.max_hamming = r.get<std::int32_t>();
  job.config.prefilter.threshold_deg = r.get<double>();
  job.config.prefilter.min_inliers = r.get<std::int32_t>();
  job.config.prefilter.max_iterations = r.get<std::int32_t>();
  job.config.prefilter.confidence = r.get<double>();
  job.config.ransac.threshold_deg = r.get<double>();
  job.config.ransac.min_inliers = r.get<std::int32_t>();
  job.config.ransac.max_iterations = r.get<std::int32_t>();
  job.config.ransac.confidence = r.get<double>();
  job.config.ransac.min_per_set = r.get<std::int32_t>();
  job.config.covariance.n_samples = r.get<std::int32_t>();
  job.config.covariance.eigenvalue_floor = r.get<double>();
  job.config.covariance.min_successes = r.get<std::int32_t>();
  job.rig_q = read_rig(r);
  job.rig_c = read_rig(r);
  const auto n_sets = r.get<std::uint32_t>();
  for (std::uint32_t s = 0; s < n_sets; ++s) {
    PairMatches pm;
    pm.q_member = r.get<std::int32_t>();
    pm.c_member = r.get<std::int32_t>();
    const auto n_matches = r.get<std::uint32_t>();
    for (std::uint32_t m = 0; m < n_matches; ++m) {
      Correspondence c;
      c.kp_a = r.get<std::int32_t>();
      c.kp_b = r.get<std::int32_t>();
      c.distance = r.get<std::int32_t>();
      pm.matches.push_back(c);
    }
    if (pm.q_member < 0 || static_cast<std::size_t>(pm.q_member) >= job.rig_q.rays.size() ||
        pm.c_member < 0 || static_cast<std::size_t>(pm.c_member) >= job.rig_c.rays.size()) {
      throw CorruptJobFile("match set references missing rig member");
    }
    for (const Correspondence& c : pm.matches) {
      if (c.kp_a < 0 || static_cast<std::size_t>(c.kp_a) >= job.rig_q.rays[pm.q_member].size() ||
          c.kp_b < 0 || static_cast<std::size_t>(c.kp_b) >= job.rig_c.rays[pm.c_member].size()) {
        throw CorruptJobFile("correspondence index out of range");
      }
    }
    job.sets.push_back(std::move(pm));
  }
  return job;
}

}  // namespace cslam
