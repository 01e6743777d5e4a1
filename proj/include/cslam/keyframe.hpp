#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "cslam/geometry.hpp"

namespace cslam {

struct KfId {
  std::uint32_t agent = 0;
  std::uint64_t seq = 0;

  friend bool operator==(const KfId&, const KfId&) = default;
  friend auto operator<=>(const KfId&, const KfId&) = default;
};

struct KfIdHash {
  std::size_t operator()(const KfId& id) const {
    return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(id.agent) << 40) ^ id.seq);
  }
};

// 256-bit binary descriptors, 32 bytes each.
inline constexpr std::uint8_t kDescriptorTypeBinary256 = 0;
inline constexpr int kBinary256Bytes = 32;

// Keypoint-aligned descriptor storage for one keyframe.
struct DescriptorBlock {
  std::uint8_t type = kDescriptorTypeBinary256;
  std::uint8_t len_bytes = kBinary256Bytes;
  std::vector<std::uint8_t> data;  // count() * len_bytes

  int count() const { return len_bytes == 0 ? 0 : static_cast<int>(data.size()) / len_bytes; }
  const std::uint8_t* at(int i) const { return data.data() + static_cast<std::size_t>(i) * len_bytes; }
};

// Everything an agent sends about one keyframe, in decoded form.
struct Keyframe {
  KfId id;
  std::uint64_t timestamp_ns = 0;
  Pose T_ws_odom;  // odometry pose of the sensor in the agent's world frame
  CameraIntrinsics camera;
  std::vector<Eigen::Vector2d> keypoints;  // undistorted pixels
  DescriptorBlock descriptors;
  std::vector<BearingRay> rays;  // keypoint bearing rays, filled on ingest

  void compute_rays() {
    rays.resize(keypoints.size());
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
      rays[i] = pixel_to_ray(keypoints[i].x(), keypoints[i].y(), camera);
    }
  }
};

using KeyframeStore = std::unordered_map<KfId, Keyframe, KfIdHash>;

}  // namespace cslam
