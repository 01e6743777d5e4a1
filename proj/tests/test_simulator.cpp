#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "cslam/errors.hpp"
#include "cslam/matching.hpp"
#include "cslam/simulator.hpp"

using namespace cslam;

namespace {
constexpr double kRad = std::numbers::pi / 180.0;
}

TEST_CASE("same seed gives byte-identical streams") {
  const Scenario scenario = default_scenario(2, 77);
  Scenario small = scenario;
  small.duration_s = 20.0;
  small.landmark_count = 400;
  const SimResult a = generate(small);
  const SimResult b = generate(small);
  REQUIRE(a.streams.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(a.streams[i].bytes == b.streams[i].bytes);
    CHECK(a.streams[i].messages.size() == b.streams[i].messages.size());
  }
  Scenario other = small;
  other.seed = 78;
  const SimResult c = generate(other);
  CHECK(a.streams[0].bytes != c.streams[0].bytes);
}

TEST_CASE("zero noise and drift reproduce ground truth odometry") {
  Scenario s = default_scenario(1, 5);
  s.duration_s = 25.0;
  s.landmark_count = 500;
  s.profiles[0].drift_per_m = 0.0;
  s.profiles[0].drift_jitter = 0.0;
  s.profiles[0].rot_drift_deg_per_m = 0.0;
  s.profiles[0].keypoint_sigma_px = 0.0;
  s.profiles[0].descriptor_flip_prob = 0.0;
  const SimResult sim = generate(s);
  const auto& gt = sim.ground_truth.per_agent.at(0);
  REQUIRE(gt.size() == sim.streams[0].messages.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK((gt[i].T_ws_odom.p - gt[i].T_ws_true.p).norm() < 1e-12);
    CHECK(rotation_distance(gt[i].T_ws_odom, gt[i].T_ws_true) < 1e-12);
  }
}

TEST_CASE("noise-free co-visible keyframes match by landmark identity") {
  Scenario s = default_scenario(1, 9);
  s.duration_s = 20.0;
  s.landmark_count = 500;
  s.profiles[0].keypoint_sigma_px = 0.0;
  s.profiles[0].descriptor_flip_prob = 0.0;
  const SimResult sim = generate(s);
  const auto& msgs = sim.streams[0].messages;
  const auto& gt = sim.ground_truth.per_agent.at(0);
  REQUIRE(msgs.size() >= 4);
  // Adjacent keyframes overlap heavily; every mutual match must agree on the
  // landmark id.
  int checked = 0;
  for (std::size_t k = 0; k + 1 < msgs.size() && checked < 5; k += 3, ++checked) {
    const Keyframe a = msgs[k].to_keyframe();
    const Keyframe b = msgs[k + 1].to_keyframe();
    const auto matches = match_pair(a.descriptors, b.descriptors);
    CHECK(matches.size() > 10);
    for (const auto& m : matches) {
      CHECK(gt[k].landmark_ids[m.kp_a] == gt[k + 1].landmark_ids[m.kp_b]);
    }
  }
}

TEST_CASE("drift magnitude tracks the configured rate") {
  // Mean final odometry error over seeds is ~rate * path_length.
  const double rate = 0.001;
  double total_ratio = 0.0;
  int runs = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Scenario s = default_scenario(1, 100 + seed);
    s.duration_s = 30.0;
    s.landmark_count = 200;
    s.profiles[0].drift_per_m = rate;
    s.profiles[0].drift_jitter = 0.1;
    s.profiles[0].rot_drift_deg_per_m = 0.0;
    const SimResult sim = generate(s);
    const auto& gt = sim.ground_truth.per_agent.at(0);
    const double err = (gt.back().T_ws_odom.p - gt.back().T_ws_true.p).norm();
    const double L = sim.streams[0].path_length_m;
    REQUIRE(L > 10.0);
    total_ratio += err / (rate * L);
    ++runs;
  }
  const double mean_ratio = total_ratio / runs;
  CHECK(mean_ratio == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("keyframe spacing honors the motion thresholds") {
  Scenario s = default_scenario(1, 11);
  s.duration_s = 30.0;
  s.landmark_count = 300;
  const SimResult sim = generate(s);
  const auto& gt = sim.ground_truth.per_agent.at(0);
  for (std::size_t k = 1; k < gt.size(); ++k) {
    const double dist = (gt[k].T_ws_odom.p - gt[k - 1].T_ws_odom.p).norm();
    const double angle = rotation_distance(gt[k].T_ws_odom, gt[k - 1].T_ws_odom);
    // At least one threshold was exceeded (tolerance for one odometry step).
    CHECK((dist >= s.kf_trans_thresh_m * 0.8 || angle >= s.kf_rot_thresh_deg * kRad * 0.8));
  }
  // Every emitted keypoint has a recorded landmark id.
  for (std::size_t k = 0; k < gt.size(); ++k) {
    CHECK(gt[k].landmark_ids.size() == sim.streams[0].messages[k].keypoints.size());
  }
}

TEST_CASE("scenario file round trip") {
  Scenario s = default_scenario(3, 321);
  s.trajectories[1].kind = TrajectorySpec::Kind::Circle;
  s.trajectories[1].radius = 3.5;
  s.trajectories[2].kind = TrajectorySpec::Kind::Polyline;
  s.trajectories[2].waypoints = {{0, 0, 1}, {5, 0, 1}, {5, 5, 1}, {0, 5, 1}};
  s.profiles[2].label = "tracking-camera";
  s.profiles[2].drift_per_m = 0.002;
  s.duration_s = 12.0;
  s.landmark_count = 300;

  const std::string path = "/tmp/cslam_test_scenario.txt";
  s.save(path);
  const Scenario loaded = Scenario::load(path);
  CHECK(loaded.seed == s.seed);
  CHECK(loaded.trajectories.size() == 3);
  CHECK(loaded.profiles[2].label == "tracking-camera");
  CHECK(loaded.trajectories[2].waypoints.size() == 4);

  // Loaded scenario generates the identical streams.
  const SimResult a = generate(s);
  const SimResult b = generate(loaded);
  for (std::size_t i = 0; i < a.streams.size(); ++i) {
    CHECK(a.streams[i].bytes == b.streams[i].bytes);
  }
}

TEST_CASE("invalid scenarios are diagnosed") {
  Scenario s = default_scenario(1, 1);
  s.duration_s = -1.0;
  CHECK_THROWS_AS(generate(s), InvalidScenario);
  s = default_scenario(1, 1);
  s.profiles[0].descriptor_flip_prob = 0.9;
  CHECK_THROWS_AS(generate(s), InvalidScenario);
  s = default_scenario(1, 1);
  s.trajectories[0].speed = 0.0;
  CHECK_THROWS_AS(generate(s), InvalidScenario);
  s = default_scenario(1, 1);
  s.profiles.clear();
  CHECK_THROWS_AS(generate(s), InvalidScenario);
  CHECK_THROWS_AS(Scenario::load("/tmp/missing_scenario.txt"), InvalidScenario);
}
