#include "cslam/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cslam/errors.hpp"
#include "cslam/pose_graph.hpp"

namespace cslam {

namespace {

constexpr int kConfigVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

VerificationConfig ServerConfig::verification() const {
  VerificationConfig v;
  v.matcher.max_hamming = matcher_max_hamming;
  v.prefilter.threshold_deg = prefilter_threshold_deg;
  v.prefilter.min_inliers = min_prefilter_inliers;
  v.prefilter.max_iterations = prefilter_max_iterations;
  v.prefilter.confidence = prefilter_confidence;
  v.ransac.threshold_deg = ransac_threshold_deg;
  v.ransac.min_inliers = min_loop_inliers;
  v.ransac.max_iterations = ransac_max_iterations;
  v.ransac.confidence = ransac_confidence;
  v.covariance.n_samples = covariance_samples;
  return v;
}

OptimizeConfig ServerConfig::optimizer() const {
  OptimizeConfig o;
  o.cauchy_scale = cauchy_scale;
  o.max_iterations = pgo_max_iterations;
  return o;
}

Matrix6d ServerConfig::odometry_information(const std::string& front_end_label) const {
  auto it = odometry_sigmas.find(front_end_label);
  if (it == odometry_sigmas.end()) it = odometry_sigmas.find("default");
  const OdometrySigmas sigmas = it == odometry_sigmas.end() ? OdometrySigmas{} : it->second;
  const double sp = 1.0 / (sigmas.sigma_p * sigmas.sigma_p);
  const double sr_rad = sigmas.sigma_rot_deg * std::numbers::pi / 180.0;
  const double sr = 1.0 / (sr_rad * sr_rad);
  Vector6d diag;
  diag << sp, sp, sp, sr, sr, sr;
  return diag.asDiagonal();
}

ServerConfig ServerConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ServerConfig config;
  bool saw_version = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "config_version") {
        if (std::stoi(value) != kConfigVersion) {
          throw ConfigError("unsupported config_version " + value);
        }
        saw_version = true;
      } else if (key == "min_prefilter_inliers") {
        config.min_prefilter_inliers = std::stoi(value);
      } else if (key == "min_loop_inliers") {
        config.min_loop_inliers = std::stoi(value);
      } else if (key == "odometry_window") {
        config.odometry_window = std::stoi(value);
      } else if (key == "bow_top_k") {
        config.bow_top_k = std::stoi(value);
      } else if (key == "bow_min_score_ratio") {
        config.bow_min_score_ratio = std::stod(value);
      } else if (key == "bow_exclusion_window") {
        config.bow_exclusion_window = std::stoi(value);
      } else if (key == "min_loop_gap") {
        config.min_loop_gap = std::stoi(value);
      } else if (key == "matcher_max_hamming") {
        config.matcher_max_hamming = std::stoi(value);
      } else if (key == "prefilter_threshold_deg") {
        config.prefilter_threshold_deg = std::stod(value);
      } else if (key == "prefilter_max_iterations") {
        config.prefilter_max_iterations = std::stoi(value);
      } else if (key == "prefilter_confidence") {
        config.prefilter_confidence = std::stod(value);
      } else if (key == "ransac_threshold_deg") {
        config.ransac_threshold_deg = std::stod(value);
      } else if (key == "ransac_max_iterations") {
        config.ransac_max_iterations = std::stoi(value);
      } else if (key == "ransac_confidence") {
        config.ransac_confidence = std::stod(value);
      } else if (key == "covariance_samples") {
        config.covariance_samples = std::stoi(value);
      } else if (key == "cauchy_scale") {
        config.cauchy_scale = std::stod(value);
      } else if (key == "pgo_max_iterations") {
        config.pgo_max_iterations = std::stoi(value);
      } else if (key == "seed") {
        config.seed = std::stoull(value);
      } else if (key == "ingest_queue_capacity") {
        config.ingest_queue_capacity = std::stoi(value);
      } else if (key == "vocabulary_path") {
        config.vocabulary_path = value;
      } else if (key == "export_dir") {
        config.export_dir = value;
      } else if (key == "dump_jobs_dir") {
        config.dump_jobs_dir = value;
      } else if (key.starts_with("odom_sigma_p.")) {
        config.odometry_sigmas[key.substr(13)].sigma_p = std::stod(value);
      } else if (key.starts_with("odom_sigma_rot_deg.")) {
        config.odometry_sigmas[key.substr(19)].sigma_rot_deg = std::stod(value);
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for '" + key + "' on line " + std::to_string(line_no));
    } catch (const std::out_of_range&) {
      throw ConfigError("value out of range for '" + key + "'");
    }
  }
  if (!saw_version) throw ConfigError("config file missing config_version");
  return config;
}

void ServerConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << "config_version = " << kConfigVersion << "\n\n";
  out << "# loop verification gates\n";
  out << "min_prefilter_inliers = " << min_prefilter_inliers << "\n";
  out << "min_loop_inliers = " << min_loop_inliers << "\n";
  out << "min_loop_gap = " << min_loop_gap << "\n\n";
  out << "# pose graph\n";
  out << "odometry_window = " << odometry_window << "\n";
  out << "cauchy_scale = " << cauchy_scale << "\n";
  out << "pgo_max_iterations = " << pgo_max_iterations << "\n\n";
  out << "# place recognition\n";
  out << "bow_top_k = " << bow_top_k << "\n";
  out << "bow_min_score_ratio = " << bow_min_score_ratio << "\n";
  out << "bow_exclusion_window = " << bow_exclusion_window << "\n\n";
  out << "# matching and RANSAC\n";
  out << "matcher_max_hamming = " << matcher_max_hamming << "\n";
  out << "prefilter_threshold_deg = " << prefilter_threshold_deg << "\n";
  out << "prefilter_max_iterations = " << prefilter_max_iterations << "\n";
  out << "prefilter_confidence = " << prefilter_confidence << "\n";
  out << "ransac_threshold_deg = " << ransac_threshold_deg << "\n";
  out << "ransac_max_iterations = " << ransac_max_iterations << "\n";
  out << "ransac_confidence = " << ransac_confidence << "\n";
  out << "covariance_samples = " << covariance_samples << "\n\n";
  out << "# runtime\n";
  out << "seed = " << seed << "\n";
  out << "ingest_queue_capacity = " << ingest_queue_capacity << "\n";
  if (!vocabulary_path.empty()) out << "vocabulary_path = " << vocabulary_path << "\n";
  if (!export_dir.empty()) out << "export_dir = " << export_dir << "\n";
  if (!dump_jobs_dir.empty()) out << "dump_jobs_dir = " << dump_jobs_dir << "\n";
  out << "\n# per-front-end odometry accuracy\n";
  for (const auto& [label, sigmas] : odometry_sigmas) {
    out << "odom_sigma_p." << label << " = " << sigmas.sigma_p << "\n";
    out << "odom_sigma_rot_deg." << label << " = " << sigmas.sigma_rot_deg << "\n";
  }
}

}  // namespace cslam
