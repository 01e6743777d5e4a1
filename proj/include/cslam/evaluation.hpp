#pragma once

#include <string>
#include <vector>

#include "cslam/geometry.hpp"

namespace cslam {

// One TUM-convention trajectory row: timestamp seconds, position, quaternion
// (x y z w on disk, stored canonically here).
struct TrajectorySample {
  double t = 0.0;
  Pose pose;
};

using Trajectory = std::vector<TrajectorySample>;

// Reads a TUM text file (t px py pz qx qy qz qw per line, '#' comments).
// Enforces strictly increasing timestamps and unit quaternions (1e-6).
Trajectory load_tum(const std::string& path);
void save_tum(const Trajectory& trajectory, const std::string& path);

// Nearest-timestamp association within max_dt seconds.
struct PairedPositions {
  std::vector<Eigen::Vector3d> estimate;
  std::vector<Eigen::Vector3d> ground_truth;
};

PairedPositions pair_by_timestamp(const Trajectory& estimate, const Trajectory& ground_truth,
                                  double max_dt = 0.05);

struct Alignment {
  Pose transform;       // applied to the estimate
  double residual_rms;  // after alignment
  int pairs = 0;
};

// Least-squares rigid alignment (rotation + translation, scale fixed at 1)
// minimizing sum |T * est_i - gt_i|^2. Throws InsufficientOverlap when fewer
// than 3 pairs are given.
Alignment align_se3(const PairedPositions& pairs);

// Root-mean-square position error of aligned pairs under a given transform.
double ate_rmse(const PairedPositions& pairs, const Pose& transform);

// Convenience: pair, align, report RMSE.
struct AteReport {
  Alignment alignment;
  double rmse = 0.0;
  int pairs = 0;
};

AteReport evaluate_ate(const Trajectory& estimate, const Trajectory& ground_truth,
                       double max_dt = 0.05);

// Joint multi-agent ATE: per-file timestamp pairing, one common alignment.
AteReport evaluate_ate_joint(const std::vector<Trajectory>& estimates,
                             const std::vector<Trajectory>& ground_truths, double max_dt = 0.05);

}  // namespace cslam
