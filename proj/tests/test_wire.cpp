#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cslam/errors.hpp"
#include "cslam/rng.hpp"
#include "cslam/wire.hpp"

using namespace cslam;

namespace {

KeyframeMessage random_message(Rng& rng, int n_keypoints) {
  KeyframeMessage msg;
  msg.agent_id = static_cast<std::uint32_t>(rng.next_u64());
  msg.kf_seq = rng.next_u64() >> 16;
  msg.timestamp_ns = rng.next_u64() >> 1;
  msg.T_ws_odom = Pose(exp_so3(rng.uniform(0.0, 3.0) * rng.unit_vec3()), rng.gaussian_vec3(5.0));
  msg.camera = {380.0f, 379.5f, 320.25f, 239.75f, 640, 480};
  msg.descriptor_type = kDescriptorTypeBinary256;
  msg.descriptor_len = kBinary256Bytes;
  for (int i = 0; i < n_keypoints; ++i) {
    msg.keypoints.emplace_back(static_cast<float>(rng.uniform(0.0, 639.9)),
                               static_cast<float>(rng.uniform(0.0, 479.9)));
  }
  msg.descriptors.resize(static_cast<std::size_t>(n_keypoints) * kBinary256Bytes);
  for (auto& b : msg.descriptors) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
  return msg;
}

bool equal(const KeyframeMessage& a, const KeyframeMessage& b) {
  return a.agent_id == b.agent_id && a.kf_seq == b.kf_seq && a.timestamp_ns == b.timestamp_ns &&
         a.keypoints == b.keypoints && a.descriptors == b.descriptors &&
         a.descriptor_type == b.descriptor_type && a.descriptor_len == b.descriptor_len &&
         a.camera.width == b.camera.width && a.camera.height == b.camera.height &&
         std::abs(a.camera.fx - b.camera.fx) == 0.0 &&
         (a.T_ws_odom.p - b.T_ws_odom.p).norm() == 0.0 &&
         a.T_ws_odom.q.coeffs() == b.T_ws_odom.q.coeffs();
}

}  // namespace

TEST_CASE("frame size formula") {
  Rng rng(1);
  // Zero keypoints: payload is exactly the 107-byte fixed header.
  const auto empty = encode_kf(random_message(rng, 0));
  CHECK(empty.size() == 4 + 107);

  // 300 keypoints with 32-byte descriptors: 107 + 300*40 bytes of payload.
  const auto big = encode_kf(random_message(rng, 300));
  CHECK(big.size() == 4 + 107 + 300 * 40);
  std::uint32_t declared;
  std::memcpy(&declared, big.data(), 4);
  CHECK(declared == 107 + 300 * 40);

  for (int n : {1, 17, 100, 1000}) {
    const auto frame = encode_kf(random_message(rng, n));
    CHECK(frame.size() == 4 + 107 + static_cast<std::size_t>(n) * (8 + 32));
  }
}

TEST_CASE("too many keypoints") {
  Rng rng(2);
  KeyframeMessage msg = random_message(rng, 1);
  msg.keypoints.resize(65536, {1.0f, 1.0f});
  msg.descriptors.resize(msg.keypoints.size() * 32, 0);
  CHECK_THROWS_AS(encode_kf(msg), TooManyKeypoints);
}

TEST_CASE("encode/decode round trip under fuzzing") {
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const KeyframeMessage msg = random_message(rng, rng.uniform_int(40));
    const auto frame = encode_kf(msg);
    const std::vector<std::uint8_t> payload(frame.begin() + 4, frame.end());
    const DecodeResult decoded = decode_frame(payload);
    const auto* out = std::get_if<KeyframeMessage>(&decoded);
    REQUIRE(out != nullptr);
    CHECK(equal(msg, *out));
    // Re-encoding reproduces the identical bytes.
    CHECK(encode_kf(*out) == frame);
  }
}

TEST_CASE("hello round trip") {
  HelloMessage hello;
  hello.agent_id = 7;
  hello.front_end_label = "tracking-camera";
  const auto frame = encode_hello(hello);
  const std::vector<std::uint8_t> payload(frame.begin() + 4, frame.end());
  const DecodeResult decoded = decode_frame(payload);
  const auto* out = std::get_if<HelloMessage>(&decoded);
  REQUIRE(out != nullptr);
  CHECK(out->agent_id == 7);
  CHECK(out->front_end_label == "tracking-camera");
}

TEST_CASE("decode rejects malformed frames with named errors") {
  Rng rng(4);
  const KeyframeMessage msg = random_message(rng, 10);
  auto frame = encode_kf(msg);
  std::vector<std::uint8_t> payload(frame.begin() + 4, frame.end());

  {
    // Truncated frame.
    std::vector<std::uint8_t> cut(payload.begin(), payload.begin() + payload.size() - 5);
    const auto result = decode_frame(cut);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::LengthMismatch);
  }
  {
    // Bad magic.
    auto bad = payload;
    bad[1] = 'X';
    const auto result = decode_frame(bad);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::BadMagic);
  }
  {
    // Unsupported version.
    auto bad = payload;
    bad[5] = 99;
    const auto result = decode_frame(bad);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::UnsupportedVersion);
  }
  {
    // Non-unit quaternion: norm 0.9.
    KeyframeMessage bad_msg = msg;
    auto bad = encode_kf(bad_msg);
    double qw = 0.9;
    std::memcpy(bad.data() + 4 + 26, &qw, 8);  // overwrite qw
    double zero = 0.0;
    std::memcpy(bad.data() + 4 + 34, &zero, 8);
    std::memcpy(bad.data() + 4 + 42, &zero, 8);
    std::memcpy(bad.data() + 4 + 50, &zero, 8);
    std::vector<std::uint8_t> p(bad.begin() + 4, bad.end());
    const auto result = decode_frame(p);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::InvariantViolation);
    CHECK(err->field == "pose quaternion norm");
  }
  {
    // Keypoint outside the image bounds.
    KeyframeMessage bad_msg = msg;
    bad_msg.keypoints[3] = {10000.0f, 2.0f};
    auto bad = encode_kf(bad_msg);
    std::vector<std::uint8_t> p(bad.begin() + 4, bad.end());
    const auto result = decode_frame(p);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::InvariantViolation);
    CHECK(err->field == "keypoint bounds");
  }
  {
    // Unknown message type.
    auto bad = payload;
    bad[0] = 0x77;
    const auto result = decode_frame(bad);
    const auto* err = std::get_if<DecodeError>(&result);
    REQUIRE(err != nullptr);
    CHECK(err->kind == DecodeError::Kind::UnknownType);
  }
  // Decoding garbage of every length never crashes.
  for (int len = 0; len < 200; ++len) {
    std::vector<std::uint8_t> garbage(len);
    for (auto& b : garbage) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
    (void)decode_frame(garbage);
  }
}

TEST_CASE("frame reader splits and resynchronizes on length prefixes") {
  Rng rng(5);
  std::vector<std::uint8_t> stream;
  std::vector<KeyframeMessage> messages;
  for (int i = 0; i < 5; ++i) {
    messages.push_back(random_message(rng, 5 + i));
    const auto frame = encode_kf(messages.back());
    stream.insert(stream.end(), frame.begin(), frame.end());
  }
  // Corrupt the payload (not the length) of the third frame: decoding fails
  // but framing continues with frame four.
  std::size_t offset = 0;
  for (int i = 0; i < 2; ++i) {
    std::uint32_t len;
    std::memcpy(&len, stream.data() + offset, 4);
    offset += 4 + len;
  }
  stream[offset + 4 + 1] = 'X';  // break the magic of frame 3

  FrameReader reader;
  // Feed in awkward chunk sizes.
  std::size_t pos = 0;
  int decoded_ok = 0, decode_errors = 0;
  while (pos < stream.size()) {
    const std::size_t chunk = std::min<std::size_t>(rng.uniform_int(700) + 1, stream.size() - pos);
    reader.feed(stream.data() + pos, chunk);
    pos += chunk;
    std::vector<std::uint8_t> payload;
    while (reader.next(payload)) {
      const auto result = decode_frame(payload);
      if (std::holds_alternative<DecodeError>(result)) {
        ++decode_errors;
      } else {
        ++decoded_ok;
      }
    }
  }
  CHECK(decoded_ok == 4);
  CHECK(decode_errors == 1);
  CHECK_FALSE(reader.broken());
}

TEST_CASE("traffic counter windowed rates") {
  TrafficCounter counter;
  // One 12107-byte frame in an empty 5 s window.
  counter.account(1, 12107, 100.0);
  CHECK(counter.agent(1, 100.0).rate_kbs == doctest::Approx(12107.0 / 5.0 / 1000.0));
  // No frames for an unknown agent.
  CHECK(counter.agent(2, 100.0).rate_kbs == 0.0);

  // 1 KF/s steady state at 12107-byte frames: ~12.1 kB/s.
  TrafficCounter steady;
  for (int s = 0; s < 60; ++s) steady.account(3, 12107, static_cast<double>(s));
  const auto traffic = steady.agent(3, 59.0);
  CHECK(traffic.rate_kbs == doctest::Approx(12.107).epsilon(0.01));
  CHECK(traffic.total_messages == 60);
  // Cumulative counters are monotone.
  steady.account(3, 100, 60.0);
  CHECK(steady.agent(3, 60.0).total_bytes == 60ull * 12107 + 100);
}
