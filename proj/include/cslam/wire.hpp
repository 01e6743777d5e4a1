#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "cslam/keyframe.hpp"

namespace cslam {

// Wire contract, version 1. All integers and floats little-endian. One frame:
//
//   u32 payload_length | payload
//
// Keyframe payload (type 0x01), 107 bytes + N*(8 + descriptor_len):
//   u8 type | "CGKF" | u8 version | u32 agent_id | u64 kf_seq | u64 timestamp_ns
//   | 7*f64 pose (qw qx qy qz px py pz) | u8 camera_model (0 = pinhole)
//   | 4*f32 fx fy cx cy | u16 width | u16 height | u8 descriptor_type
//   | u8 descriptor_len | u16 num_keypoints | N*(f32 u, f32 v) | N*descriptor_len bytes
//
// Hello payload (type 0x00), sent exactly once per connection, first:
//   u8 type | "CGHL" | u8 version | u32 agent_id | u8 label_len | label bytes
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::uint8_t kMsgTypeHello = 0x00;
inline constexpr std::uint8_t kMsgTypeKeyframe = 0x01;
inline constexpr std::size_t kKeyframeHeaderBytes = 107;
inline constexpr std::size_t kMaxFrameBytes = 1 << 24;

struct HelloMessage {
  std::uint32_t agent_id = 0;
  std::string front_end_label;  // <= 64 bytes of UTF-8
};

struct KeyframeMessage {
  std::uint32_t agent_id = 0;
  std::uint64_t kf_seq = 0;
  std::uint64_t timestamp_ns = 0;
  Pose T_ws_odom;
  CameraIntrinsics camera;
  std::uint8_t descriptor_type = kDescriptorTypeBinary256;
  std::uint8_t descriptor_len = kBinary256Bytes;
  std::vector<std::pair<float, float>> keypoints;
  std::vector<std::uint8_t> descriptors;  // keypoints.size() * descriptor_len

  Keyframe to_keyframe() const;
};

struct DecodeError {
  enum class Kind { BadMagic, UnsupportedVersion, UnknownType, LengthMismatch, InvariantViolation };
  Kind kind = Kind::BadMagic;
  std::string field;
};

const char* to_string(DecodeError::Kind kind);

using DecodeResult = std::variant<HelloMessage, KeyframeMessage, DecodeError>;

// Full frame including the u32 length prefix. Throws TooManyKeypoints.
std::vector<std::uint8_t> encode_kf(const KeyframeMessage& msg);
std::vector<std::uint8_t> encode_hello(const HelloMessage& msg);

// Decodes one payload (without the length prefix). Never throws on
// malformed input; errors come back as DecodeError values.
DecodeResult decode_frame(const std::uint8_t* payload, std::size_t len);
DecodeResult decode_frame(const std::vector<std::uint8_t>& payload);

// Incremental length-prefixed stream splitter. Frames with an oversized
// length mark the stream as broken (framing can no longer be trusted).
class FrameReader {
 public:
  void feed(const std::uint8_t* data, std::size_t len);
  // Returns the next complete payload, or false if more bytes are needed.
  bool next(std::vector<std::uint8_t>& payload);
  bool broken() const { return broken_; }

 private:
  void compact();

  std::vector<std::uint8_t> buffer_;
  std::size_t read_pos_ = 0;
  bool broken_ = false;
};

// Per-agent cumulative traffic plus a 5-second sliding-window rate.
class TrafficCounter {
 public:
  static constexpr double kWindowSeconds = 5.0;

  void account(std::uint32_t agent_id, std::size_t frame_len, double t_seconds);

  struct AgentTraffic {
    std::uint64_t total_bytes = 0;
    std::uint64_t total_messages = 0;
    double rate_kbs = 0.0;  // kB/s (1 kB = 1000 bytes) over the window
  };

  // Rate evaluated at time t_seconds (evicts entries older than the window).
  AgentTraffic agent(std::uint32_t agent_id, double t_seconds) const;
  std::vector<std::uint32_t> agents() const;

 private:
  struct Window {
    std::uint64_t total_bytes = 0;
    std::uint64_t total_messages = 0;
    std::deque<std::pair<double, std::size_t>> recent;
  };
  std::map<std::uint32_t, Window> per_agent_;
};

}  // namespace cslam
