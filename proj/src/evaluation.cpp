#include "cslam/evaluation.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cslam/errors.hpp"

namespace cslam {

Trajectory load_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrajectoryIoError("cannot open trajectory file: " + path);
  Trajectory out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, px, py, pz, qx, qy, qz, qw;
    if (!(ss >> t >> px >> py >> pz >> qx >> qy >> qz >> qw)) {
      throw TrajectoryIoError(path + ": malformed row at line " + std::to_string(line_no));
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw TrajectoryIoError(path + ": non-unit quaternion at line " + std::to_string(line_no));
    }
    if (!out.empty() && t <= out.back().t) {
      throw TrajectoryIoError(path + ": timestamps not strictly increasing at line " +
                              std::to_string(line_no));
    }
    out.push_back({t, Pose(q, {px, py, pz})});
  }
  return out;
}

void save_tum(const Trajectory& trajectory, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TrajectoryIoError("cannot write trajectory file: " + path);
  out.precision(17);
  for (const auto& s : trajectory) {
    out << s.t << " " << s.pose.p.x() << " " << s.pose.p.y() << " " << s.pose.p.z() << " "
        << s.pose.q.x() << " " << s.pose.q.y() << " " << s.pose.q.z() << " " << s.pose.q.w()
        << "\n";
  }
}

PairedPositions pair_by_timestamp(const Trajectory& estimate, const Trajectory& ground_truth,
                                  double max_dt) {
  PairedPositions out;
  std::size_t j = 0;
  for (const auto& est : estimate) {
    while (j + 1 < ground_truth.size() &&
           std::abs(ground_truth[j + 1].t - est.t) <= std::abs(ground_truth[j].t - est.t)) {
      ++j;
    }
    if (ground_truth.empty()) break;
    if (std::abs(ground_truth[j].t - est.t) <= max_dt) {
      out.estimate.push_back(est.pose.p);
      out.ground_truth.push_back(ground_truth[j].pose.p);
    }
  }
  return out;
}

Alignment align_se3(const PairedPositions& pairs) {
  const int n = static_cast<int>(pairs.estimate.size());
  if (n < 3) throw InsufficientOverlap("need at least 3 paired samples for SE(3) alignment");

  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_gt = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    mean_est += pairs.estimate[i];
    mean_gt += pairs.ground_truth[i];
  }
  mean_est /= n;
  mean_gt /= n;

  // Cross-covariance of centered clouds; Kabsch via SVD.
  Eigen::Matrix3d W = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i) {
    W += (pairs.ground_truth[i] - mean_gt) * (pairs.estimate[i] - mean_est).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) S(2, 2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixU() * S * svd.matrixV().transpose();

  Alignment alignment;
  alignment.transform = Pose(Eigen::Quaterniond(R), mean_gt - R * mean_est);
  alignment.pairs = n;
  alignment.residual_rms = ate_rmse(pairs, alignment.transform);
  return alignment;
}

double ate_rmse(const PairedPositions& pairs, const Pose& transform) {
  if (pairs.estimate.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.estimate.size(); ++i) {
    sum += (transform.apply(pairs.estimate[i]) - pairs.ground_truth[i]).squaredNorm();
  }
  return std::sqrt(sum / pairs.estimate.size());
}

AteReport evaluate_ate(const Trajectory& estimate, const Trajectory& ground_truth, double max_dt) {
  const PairedPositions pairs = pair_by_timestamp(estimate, ground_truth, max_dt);
  AteReport report;
  report.alignment = align_se3(pairs);
  report.rmse = report.alignment.residual_rms;
  report.pairs = report.alignment.pairs;
  return report;
}

AteReport evaluate_ate_joint(const std::vector<Trajectory>& estimates,
                             const std::vector<Trajectory>& ground_truths, double max_dt) {
  if (estimates.size() != ground_truths.size()) {
    throw InsufficientOverlap("joint ATE needs matching estimate/ground-truth file counts");
  }
  PairedPositions all;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const PairedPositions pairs = pair_by_timestamp(estimates[i], ground_truths[i], max_dt);
    all.estimate.insert(all.estimate.end(), pairs.estimate.begin(), pairs.estimate.end());
    all.ground_truth.insert(all.ground_truth.end(), pairs.ground_truth.begin(),
                            pairs.ground_truth.end());
  }
  AteReport report;
  report.alignment = align_se3(all);
  report.rmse = report.alignment.residual_rms;
  report.pairs = report.alignment.pairs;
  return report;
}

}  // namespace cslam
