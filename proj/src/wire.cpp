#include "cslam/wire.hpp"

#include <cmath>
#include <cstring>

#include "cslam/errors.hpp"

namespace cslam {

Keyframe KeyframeMessage::to_keyframe() const {
  Keyframe kf;
  kf.id = {agent_id, kf_seq};
  kf.timestamp_ns = timestamp_ns;
  kf.T_ws_odom = T_ws_odom;
  kf.camera = camera;
  kf.keypoints.reserve(keypoints.size());
  for (const auto& [u, v] : keypoints) kf.keypoints.emplace_back(u, v);
  kf.descriptors.type = descriptor_type;
  kf.descriptors.len_bytes = descriptor_len;
  kf.descriptors.data = descriptors;
  kf.compute_rays();
  return kf;
}

const char* to_string(DecodeError::Kind kind) {
  switch (kind) {
    case DecodeError::Kind::BadMagic: return "BadMagic";
    case DecodeError::Kind::UnsupportedVersion: return "UnsupportedVersion";
    case DecodeError::Kind::UnknownType: return "UnknownType";
    case DecodeError::Kind::LengthMismatch: return "LengthMismatch";
    case DecodeError::Kind::InvariantViolation: return "InvariantViolation";
  }
  return "?";
}

namespace {

constexpr char kKfMagic[4] = {'C', 'G', 'K', 'F'};
constexpr char kHelloMagic[4] = {'C', 'G', 'H', 'L'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

struct Cursor {
  const std::uint8_t* data;
  std::size_t len;
  std::size_t off = 0;

  bool has(std::size_t n) const { return off + n <= len; }
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, data + off, sizeof(T));
    off += sizeof(T);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_kf(const KeyframeMessage& msg) {
  if (msg.keypoints.size() > 65535) {
    throw TooManyKeypoints("keyframe carries more than 65535 keypoints");
  }
  const std::size_t n = msg.keypoints.size();
  const std::size_t payload = kKeyframeHeaderBytes + n * (8 + msg.descriptor_len);
  std::vector<std::uint8_t> out;
  out.reserve(4 + payload);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload));
  put<std::uint8_t>(out, kMsgTypeKeyframe);
  out.insert(out.end(), kKfMagic, kKfMagic + 4);
  put<std::uint8_t>(out, kWireVersion);
  put<std::uint32_t>(out, msg.agent_id);
  put<std::uint64_t>(out, msg.kf_seq);
  put<std::uint64_t>(out, msg.timestamp_ns);
  put<double>(out, msg.T_ws_odom.q.w());
  put<double>(out, msg.T_ws_odom.q.x());
  put<double>(out, msg.T_ws_odom.q.y());
  put<double>(out, msg.T_ws_odom.q.z());
  put<double>(out, msg.T_ws_odom.p.x());
  put<double>(out, msg.T_ws_odom.p.y());
  put<double>(out, msg.T_ws_odom.p.z());
  put<std::uint8_t>(out, 0);  // camera model: pinhole
  put<float>(out, static_cast<float>(msg.camera.fx));
  put<float>(out, static_cast<float>(msg.camera.fy));
  put<float>(out, static_cast<float>(msg.camera.cx));
  put<float>(out, static_cast<float>(msg.camera.cy));
  put<std::uint16_t>(out, msg.camera.width);
  put<std::uint16_t>(out, msg.camera.height);
  put<std::uint8_t>(out, msg.descriptor_type);
  put<std::uint8_t>(out, msg.descriptor_len);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(n));
  for (const auto& [u, v] : msg.keypoints) {
    put<float>(out, u);
    put<float>(out, v);
  }
  out.insert(out.end(), msg.descriptors.begin(), msg.descriptors.end());
  return out;
}

std::vector<std::uint8_t> encode_hello(const HelloMessage& msg) {
  std::string label = msg.front_end_label.substr(0, 64);
  std::vector<std::uint8_t> out;
  const std::size_t payload = 1 + 4 + 1 + 4 + 1 + label.size();
  out.reserve(4 + payload);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(payload));
  put<std::uint8_t>(out, kMsgTypeHello);
  out.insert(out.end(), kHelloMagic, kHelloMagic + 4);
  put<std::uint8_t>(out, kWireVersion);
  put<std::uint32_t>(out, msg.agent_id);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(label.size()));
  out.insert(out.end(), label.begin(), label.end());
  return out;
}

namespace {

DecodeResult fail(DecodeError::Kind kind, const std::string& field) {
  return DecodeError{kind, field};
}

DecodeResult decode_hello(Cursor& c) {
  if (!c.has(4 + 1 + 4 + 1)) return fail(DecodeError::Kind::LengthMismatch, "hello header");
  if (std::memcmp(c.data + c.off, kHelloMagic, 4) != 0) {
    return fail(DecodeError::Kind::BadMagic, "hello magic");
  }
  c.off += 4;
  const auto version = c.get<std::uint8_t>();
  if (version != kWireVersion) return fail(DecodeError::Kind::UnsupportedVersion, "hello version");
  HelloMessage msg;
  msg.agent_id = c.get<std::uint32_t>();
  const auto label_len = c.get<std::uint8_t>();
  if (label_len > 64) return fail(DecodeError::Kind::InvariantViolation, "label length");
  if (!c.has(label_len)) return fail(DecodeError::Kind::LengthMismatch, "label");
  msg.front_end_label.assign(reinterpret_cast<const char*>(c.data + c.off), label_len);
  c.off += label_len;
  if (c.off != c.len) return fail(DecodeError::Kind::LengthMismatch, "trailing bytes");
  return msg;
}

DecodeResult decode_keyframe(Cursor& c) {
  if (c.len < kKeyframeHeaderBytes) {
    return fail(DecodeError::Kind::LengthMismatch, "keyframe header");
  }
  if (std::memcmp(c.data + c.off, kKfMagic, 4) != 0) {
    return fail(DecodeError::Kind::BadMagic, "keyframe magic");
  }
  c.off += 4;
  const auto version = c.get<std::uint8_t>();
  if (version != kWireVersion) {
    return fail(DecodeError::Kind::UnsupportedVersion, "keyframe version");
  }
  KeyframeMessage msg;
  msg.agent_id = c.get<std::uint32_t>();
  msg.kf_seq = c.get<std::uint64_t>();
  msg.timestamp_ns = c.get<std::uint64_t>();
  const double qw = c.get<double>(), qx = c.get<double>(), qy = c.get<double>(),
               qz = c.get<double>();
  const double px = c.get<double>(), py = c.get<double>(), pz = c.get<double>();
  const Eigen::Quaterniond q(qw, qx, qy, qz);
  if (!std::isfinite(q.norm()) || std::abs(q.norm() - 1.0) > 1e-6) {
    return fail(DecodeError::Kind::InvariantViolation, "pose quaternion norm");
  }
  if (!std::isfinite(px) || !std::isfinite(py) || !std::isfinite(pz)) {
    return fail(DecodeError::Kind::InvariantViolation, "pose translation");
  }
  // Stored exactly as received: renormalizing here would break the bit-level
  // encode/decode round trip.
  msg.T_ws_odom.q = q;
  msg.T_ws_odom.p = {px, py, pz};
  const auto camera_model = c.get<std::uint8_t>();
  if (camera_model != 0) return fail(DecodeError::Kind::InvariantViolation, "camera model");
  msg.camera.fx = c.get<float>();
  msg.camera.fy = c.get<float>();
  msg.camera.cx = c.get<float>();
  msg.camera.cy = c.get<float>();
  msg.camera.width = c.get<std::uint16_t>();
  msg.camera.height = c.get<std::uint16_t>();
  if (!(msg.camera.fx > 0.0) || !(msg.camera.fy > 0.0)) {
    return fail(DecodeError::Kind::InvariantViolation, "focal length");
  }
  msg.descriptor_type = c.get<std::uint8_t>();
  msg.descriptor_len = c.get<std::uint8_t>();
  const auto n = c.get<std::uint16_t>();
  const std::size_t expect = kKeyframeHeaderBytes + std::size_t(n) * (8 + msg.descriptor_len);
  if (c.len != expect) return fail(DecodeError::Kind::LengthMismatch, "keypoint payload");
  msg.keypoints.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) {
    const float u = c.get<float>();
    const float v = c.get<float>();
    if (!std::isfinite(u) || !std::isfinite(v) || u < 0.0f || v < 0.0f ||
        u >= static_cast<float>(msg.camera.width) || v >= static_cast<float>(msg.camera.height)) {
      return fail(DecodeError::Kind::InvariantViolation, "keypoint bounds");
    }
    msg.keypoints.emplace_back(u, v);
  }
  msg.descriptors.assign(c.data + c.off, c.data + c.off + std::size_t(n) * msg.descriptor_len);
  c.off += std::size_t(n) * msg.descriptor_len;
  return msg;
}

}  // namespace

DecodeResult decode_frame(const std::uint8_t* payload, std::size_t len) {
  Cursor c{payload, len};
  if (!c.has(1)) return fail(DecodeError::Kind::LengthMismatch, "empty frame");
  const auto type = c.get<std::uint8_t>();
  switch (type) {
    case kMsgTypeHello: return decode_hello(c);
    case kMsgTypeKeyframe: return decode_keyframe(c);
    default: return fail(DecodeError::Kind::UnknownType, "message type");
  }
}

DecodeResult decode_frame(const std::vector<std::uint8_t>& payload) {
  return decode_frame(payload.data(), payload.size());
}

void FrameReader::feed(const std::uint8_t* data, std::size_t len) {
  buffer_.insert(buffer_.end(), data, data + len);
}

void FrameReader::compact() {
  if (read_pos_ > 0) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(read_pos_));
    read_pos_ = 0;
  }
}

bool FrameReader::next(std::vector<std::uint8_t>& payload) {
  if (broken_) return false;
  if (buffer_.size() - read_pos_ < 4) {
    compact();
    return false;
  }
  std::uint32_t frame_len;
  std::memcpy(&frame_len, buffer_.data() + read_pos_, 4);
  if (frame_len == 0 || frame_len > kMaxFrameBytes) {
    broken_ = true;
    return false;
  }
  if (buffer_.size() - read_pos_ < 4 + std::size_t(frame_len)) {
    compact();
    return false;
  }
  payload.assign(buffer_.begin() + read_pos_ + 4, buffer_.begin() + read_pos_ + 4 + frame_len);
  read_pos_ += 4 + frame_len;
  return true;
}

void TrafficCounter::account(std::uint32_t agent_id, std::size_t frame_len, double t_seconds) {
  Window& w = per_agent_[agent_id];
  w.total_bytes += frame_len;
  w.total_messages += 1;
  w.recent.emplace_back(t_seconds, frame_len);
  while (!w.recent.empty() && w.recent.front().first <= t_seconds - kWindowSeconds) {
    w.recent.pop_front();
  }
}

TrafficCounter::AgentTraffic TrafficCounter::agent(std::uint32_t agent_id,
                                                   double t_seconds) const {
  AgentTraffic out;
  const auto it = per_agent_.find(agent_id);
  if (it == per_agent_.end()) return out;
  out.total_bytes = it->second.total_bytes;
  out.total_messages = it->second.total_messages;
  std::uint64_t windowed = 0;
  for (const auto& [t, bytes] : it->second.recent) {
    if (t > t_seconds - kWindowSeconds) windowed += bytes;
  }
  out.rate_kbs = static_cast<double>(windowed) / kWindowSeconds / 1000.0;
  return out;
}

std::vector<std::uint32_t> TrafficCounter::agents() const {
  std::vector<std::uint32_t> out;
  out.reserve(per_agent_.size());
  for (const auto& [agent, w] : per_agent_) out.push_back(agent);
  return out;
}

}  // namespace cslam
