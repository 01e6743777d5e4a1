#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cslam/errors.hpp"
#include "cslam/matching.hpp"
#include "cslam/rng.hpp"

using namespace cslam;

namespace {

DescriptorBlock random_block(Rng& rng, int count) {
  DescriptorBlock block;
  block.data.resize(static_cast<std::size_t>(count) * kBinary256Bytes);
  for (auto& b : block.data) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
  return block;
}

Keyframe keyframe_with(const DescriptorBlock& block) {
  Keyframe kf;
  kf.descriptors = block;
  return kf;
}

}  // namespace

TEST_CASE("hamming distance") {
  std::uint8_t a[32] = {0};
  std::uint8_t b[32] = {0};
  CHECK(hamming_distance(a, b, 32) == 0);
  b[0] = 0x01;
  CHECK(hamming_distance(a, b, 32) == 1);
  b[31] = 0xff;
  CHECK(hamming_distance(a, b, 32) == 9);
}

TEST_CASE("identical descriptor lists match one-to-one at distance 0") {
  Rng rng(1);
  const DescriptorBlock block = random_block(rng, 40);
  const auto matches = match_pair(block, block);
  CHECK(matches.size() == 40);
  for (const auto& m : matches) {
    CHECK(m.kp_a == m.kp_b);
    CHECK(m.distance == 0);
  }
}

TEST_CASE("disjoint random descriptors produce no matches under the threshold") {
  // Random 256-bit strings differ in ~128 bits; the binomial tail below 64
  // is ~1e-24, so zero matches is the expected draw.
  Rng rng(2);
  const auto a = random_block(rng, 100);
  const auto b = random_block(rng, 100);
  int total_dist = 0;
  for (int i = 0; i < 100; ++i) total_dist += hamming_distance(a.at(i), b.at(i), 32);
  CHECK(std::abs(total_dist / 100.0 - 128.0) < 10.0);
  CHECK(match_pair(a, b).empty());
}

TEST_CASE("one flipped bit still matches at distance 1") {
  Rng rng(3);
  auto a = random_block(rng, 10);
  auto b = a;
  b.data[5 * 32 + 2] ^= 0x10;
  const auto matches = match_pair(a, b);
  CHECK(matches.size() == 10);
  for (const auto& m : matches) {
    CHECK(m.distance == (m.kp_a == 5 ? 1 : 0));
  }
}

TEST_CASE("matching is symmetric and mutual") {
  Rng rng(4);
  // Descriptor clouds with noisy copies: flip a few bits of half of a's.
  auto a = random_block(rng, 60);
  DescriptorBlock b = random_block(rng, 60);
  for (int i = 0; i < 30; ++i) {
    for (int byte = 0; byte < 32; ++byte) b.data[i * 32 + byte] = a.data[(i + 10) * 32 + byte];
    b.data[i * 32 + (i % 32)] ^= 0x3;
  }
  const auto ab = match_pair(a, b);
  const auto ba = match_pair(b, a);
  REQUIRE(ab.size() == ba.size());
  for (const auto& m : ab) {
    const bool found = std::any_of(ba.begin(), ba.end(), [&](const Correspondence& r) {
      return r.kp_a == m.kp_b && r.kp_b == m.kp_a && r.distance == m.distance;
    });
    CHECK(found);
  }
  // Each keypoint appears at most once.
  std::vector<int> seen_a(60, 0), seen_b(60, 0);
  for (const auto& m : ab) {
    CHECK(++seen_a[m.kp_a] == 1);
    CHECK(++seen_b[m.kp_b] == 1);
  }
}

TEST_CASE("descriptor type mismatch") {
  Rng rng(5);
  auto a = random_block(rng, 4);
  auto b = a;
  b.type = 1;
  CHECK_THROWS_AS(match_pair(a, b), DescriptorTypeMismatch);
}

TEST_CASE("match_rigs produces one set per member pair") {
  Rng rng(6);
  const auto shared = random_block(rng, 25);
  const Keyframe q0 = keyframe_with(shared), q1 = keyframe_with(shared);
  const Keyframe c0 = keyframe_with(shared), c1 = keyframe_with(shared), c2 = keyframe_with(shared);
  const auto sets = match_rigs({&q0, &q1}, {&c0, &c1, &c2});
  REQUIRE(sets.size() == 6);
  for (const auto& s : sets) CHECK(s.matches.size() == 25);
  CHECK(sets[0].q_member == 0);
  CHECK(sets[0].c_member == 0);
  CHECK(sets[5].q_member == 1);
  CHECK(sets[5].c_member == 2);

  // Disjoint landmark sets: all six sets empty.
  Rng rng2(7);
  const Keyframe d0 = keyframe_with(random_block(rng2, 25));
  const Keyframe d1 = keyframe_with(random_block(rng2, 25));
  const Keyframe e0 = keyframe_with(random_block(rng2, 25));
  const Keyframe e1 = keyframe_with(random_block(rng2, 25));
  const Keyframe e2 = keyframe_with(random_block(rng2, 25));
  for (const auto& s : match_rigs({&d0, &d1}, {&e0, &e1, &e2})) CHECK(s.matches.empty());
}
