// Offline evaluation and debugging: trajectory error metrics, pre/post
// optimization comparison, loop-log inspection, and verification replay.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "cslam/errors.hpp"
#include "cslam/evaluation.hpp"
#include "cslam/relative_pose.hpp"
#include "cslam/rng.hpp"

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

void write_ate_csv(const std::string& path, const cslam::AteReport& report) {
  std::ofstream out(path);
  out << "pairs,rmse_m,align_tx,align_ty,align_tz,align_qw,align_qx,align_qy,align_qz\n";
  out.precision(12);
  const auto& T = report.alignment.transform;
  out << report.pairs << "," << report.rmse << "," << T.p.x() << "," << T.p.y() << ","
      << T.p.z() << "," << T.q.w() << "," << T.q.x() << "," << T.q.y() << "," << T.q.z() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory evaluation and loop inspection"};
  app.require_subcommand(1);

  // eval ate --est f --gt f
  auto* ate_cmd = app.add_subcommand("ate", "absolute trajectory error after SE(3) alignment");
  std::string ate_est, ate_gt, ate_csv;
  double ate_max_dt = 0.05;
  ate_cmd->add_option("--est", ate_est, "estimated trajectory (TUM)")->required();
  ate_cmd->add_option("--gt", ate_gt, "ground-truth trajectory (TUM)")->required();
  ate_cmd->add_option("--max-dt", ate_max_dt, "pairing tolerance in seconds");
  ate_cmd->add_option("--csv", ate_csv, "write machine-readable result");

  // eval ate-joint --est f... --gt f...
  auto* joint_cmd = app.add_subcommand("ate-joint", "joint multi-agent ATE, one alignment");
  std::vector<std::string> joint_est, joint_gt;
  std::string joint_csv;
  double joint_max_dt = 0.05;
  joint_cmd->add_option("--est", joint_est, "estimated trajectories (TUM), repeatable")
      ->required();
  joint_cmd->add_option("--gt", joint_gt, "ground-truth trajectories (TUM), repeatable")
      ->required();
  joint_cmd->add_option("--max-dt", joint_max_dt, "pairing tolerance in seconds");
  joint_cmd->add_option("--csv", joint_csv, "write machine-readable result");

  // eval compare --before f --after f [--gt g]
  auto* compare_cmd = app.add_subcommand("compare", "pre/post optimization comparison");
  std::string cmp_before, cmp_after, cmp_gt;
  compare_cmd->add_option("--before", cmp_before, "trajectory before (TUM)")->required();
  compare_cmd->add_option("--after", cmp_after, "trajectory after (TUM)")->required();
  compare_cmd->add_option("--gt", cmp_gt, "optional ground truth; compares both against it");

  // eval loops --log f
  auto* loops_cmd = app.add_subcommand("loops", "summarize a loop log CSV");
  std::string loops_log;
  loops_cmd->add_option("--log", loops_log, "loops.csv from the server")->required();

  // solve-loop --job f
  auto* solve_cmd = app.add_subcommand("solve-loop", "replay a verification job dump");
  std::string job_path;
  double inject_outliers = 0.0;
  std::uint64_t inject_seed = 1;
  solve_cmd->add_option("--job", job_path, "job file (.cgjb)")->required();
  solve_cmd->add_option("--inject-outliers", inject_outliers,
                        "replace this fraction of matches with random wrong pairings");
  solve_cmd->add_option("--seed", inject_seed, "seed for outlier injection");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ate_cmd) {
      const auto report =
          cslam::evaluate_ate(cslam::load_tum(ate_est), cslam::load_tum(ate_gt), ate_max_dt);
      std::cout << "pairs " << report.pairs << "\n";
      std::cout << "ate_rmse_m " << report.rmse << "\n";
      if (!ate_csv.empty()) write_ate_csv(ate_csv, report);
      return 0;
    }
    if (*joint_cmd) {
      std::vector<cslam::Trajectory> est, gt;
      for (const auto& f : joint_est) est.push_back(cslam::load_tum(f));
      for (const auto& f : joint_gt) gt.push_back(cslam::load_tum(f));
      const auto report = cslam::evaluate_ate_joint(est, gt, joint_max_dt);
      std::cout << "trajectories " << est.size() << "\n";
      std::cout << "pairs " << report.pairs << "\n";
      std::cout << "ate_rmse_m " << report.rmse << "\n";
      if (!joint_csv.empty()) write_ate_csv(joint_csv, report);
      return 0;
    }
    if (*compare_cmd) {
      const auto before = cslam::load_tum(cmp_before);
      const auto after = cslam::load_tum(cmp_after);
      if (cmp_gt.empty()) {
        // How far the optimization moved the trajectory, paired by timestamp.
        const auto pairs = cslam::pair_by_timestamp(after, before);
        std::cout << "pairs " << pairs.estimate.size() << "\n";
        std::cout << "rms_change_m " << cslam::ate_rmse(pairs, cslam::Pose::identity()) << "\n";
      } else {
        const auto gt = cslam::load_tum(cmp_gt);
        const auto rb = cslam::evaluate_ate(before, gt);
        const auto ra = cslam::evaluate_ate(after, gt);
        std::cout << "ate_before_m " << rb.rmse << "\n";
        std::cout << "ate_after_m " << ra.rmse << "\n";
        std::cout << "improvement " << (rb.rmse > 0 ? 1.0 - ra.rmse / rb.rmse : 0.0) << "\n";
      }
      return 0;
    }
    if (*loops_cmd) {
      std::ifstream in(loops_log);
      if (!in) throw cslam::TrajectoryIoError("cannot open loop log: " + loops_log);
      std::string line;
      std::getline(in, line);  // header
      int count = 0, fused = 0, min_inliers = INT32_MAX, max_inliers = 0;
      double sum_trans = 0.0, sum_rot = 0.0, sum_trace = 0.0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 9) continue;
        ++count;
        const int inliers = std::stoi(fields[4]);
        min_inliers = std::min(min_inliers, inliers);
        max_inliers = std::max(max_inliers, inliers);
        sum_trans += std::stod(fields[5]);
        sum_rot += std::stod(fields[6]);
        sum_trace += std::stod(fields[7]);
        fused += std::stoi(fields[8]);
      }
      std::cout << "loops " << count << "\n";
      std::cout << "fusions " << fused << "\n";
      if (count > 0) {
        std::cout << "inliers_min " << min_inliers << "\n";
        std::cout << "inliers_max " << max_inliers << "\n";
        std::cout << "mean_translation_m " << sum_trans / count << "\n";
        std::cout << "mean_rotation_deg " << sum_rot / count << "\n";
        std::cout << "mean_cov_trace " << sum_trace / count << "\n";
      }
      return 0;
    }
    if (*solve_cmd) {
      cslam::VerificationJob job = cslam::load_job(job_path);
      std::size_t total_matches = 0;
      for (const auto& set : job.sets) total_matches += set.matches.size();
      std::cout << "job seed " << job.seed << ", " << job.sets.size() << " sets, "
                << total_matches << " matches\n";
      if (inject_outliers > 0.0) {
        cslam::Rng rng(inject_seed);
        int injected = 0;
        for (auto& set : job.sets) {
          const auto& rays_c = job.rig_c.rays[set.c_member];
          for (auto& m : set.matches) {
            if (rng.uniform() < inject_outliers) {
              m.kp_b = rng.uniform_int(static_cast<int>(rays_c.size()));
              ++injected;
            }
          }
        }
        std::cout << "injected " << injected << " outliers\n";
      }
      const cslam::VerificationOutcome outcome = cslam::replay_job(job);
      const char* status = "?";
      switch (outcome.status) {
        case cslam::VerificationOutcome::Status::Accepted: status = "accepted"; break;
        case cslam::VerificationOutcome::Status::PrefilterRejected:
          status = "rejected_prefilter";
          break;
        case cslam::VerificationOutcome::Status::RansacRejected: status = "rejected_ransac"; break;
        case cslam::VerificationOutcome::Status::CovarianceDegenerate:
          status = "rejected_covariance";
          break;
      }
      std::cout << "status " << status << "\n";
      std::cout << "prefilter_inliers";
      for (int n : outcome.prefilter_inliers) std::cout << " " << n;
      std::cout << "\n";
      if (outcome.rel_pose.success) {
        const auto& T = outcome.constraint.T_cq;
        std::cout << "inliers " << outcome.rel_pose.inlier_indices.size() << "\n";
        std::cout << "ransac_iterations " << outcome.rel_pose.iterations << "\n";
        std::cout << "t_cq_m " << T.p.x() << " " << T.p.y() << " " << T.p.z() << "\n";
        std::cout << "rotation_deg " << cslam::rotation_angle(T.q) * kRadToDeg << "\n";
        if (outcome.accepted()) std::cout << "cov_trace " << outcome.constraint.covariance_trace << "\n";
      }
      std::cout << "timing_ms prefilter " << outcome.timings.prefilter_ms << " ransac "
                << outcome.timings.ransac_ms << " covariance " << outcome.timings.covariance_ms
                << " total " << outcome.timings.total_ms << "\n";
      return 0;
    }
  } catch (const cslam::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
