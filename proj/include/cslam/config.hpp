#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cslam/geometry.hpp"
#include "cslam/relative_pose.hpp"

namespace cslam {

struct OdometrySigmas {
  double sigma_p = 0.05;        // meters per edge
  double sigma_rot_deg = 0.5;   // degrees per edge
};

// Server configuration: versioned human-readable key-value file
// ("key = value" lines, '#' comments). The front-end label from an agent's
// hello message selects its odometry sigmas; unknown labels fall back to
// "default".
struct ServerConfig {
  // Hard gates and pipeline thresholds.
  int min_prefilter_inliers = 30;
  int min_loop_inliers = 100;
  int odometry_window = 4;  // q: neighbor keyframes per odometry constraint
  int bow_top_k = 3;
  double bow_min_score_ratio = 0.5;
  int bow_exclusion_window = 20;
  int min_loop_gap = 10;  // keyframes between accepted loops, per agent
  int matcher_max_hamming = 64;
  double prefilter_threshold_deg = 0.35;
  int prefilter_max_iterations = 1000;
  double prefilter_confidence = 0.99;
  double ransac_threshold_deg = 0.35;
  int ransac_max_iterations = 500;
  double ransac_confidence = 0.99;
  int covariance_samples = 30;
  double cauchy_scale = 1.0;
  int pgo_max_iterations = 100;
  std::uint64_t seed = 1;
  int ingest_queue_capacity = 64;
  std::map<std::string, OdometrySigmas> odometry_sigmas = {{"default", {}}};

  // Operational paths (usually given on the command line instead).
  std::string vocabulary_path;
  std::string export_dir;
  std::string dump_jobs_dir;

  VerificationConfig verification() const;
  OptimizeConfig optimizer() const;
  Matrix6d odometry_information(const std::string& front_end_label) const;

  static ServerConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace cslam
