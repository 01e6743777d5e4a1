#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cslam/keyframe.hpp"

namespace cslam {

// One 2D-2D match between keypoint kp_a of keyframe a and kp_b of keyframe b.
struct Correspondence {
  int kp_a = 0;
  int kp_b = 0;
  int distance = 0;  // Hamming bits
};

struct MatcherConfig {
  int max_hamming = 64;  // of 256 bits
};

int hamming_distance(const std::uint8_t* a, const std::uint8_t* b, int len_bytes);

// Mutual-nearest-neighbor brute-force matching between two descriptor blocks.
// Each keypoint appears in at most one match; matches above max_hamming are
// dropped. Throws DescriptorTypeMismatch if the blocks disagree on type or
// length.
std::vector<Correspondence> match_pair(const DescriptorBlock& a, const DescriptorBlock& b,
                                       const MatcherConfig& config = {});

// Correspondences between member q_member of the query rig and c_member of
// the candidate rig.
struct PairMatches {
  int q_member = 0;
  int c_member = 0;
  std::vector<Correspondence> matches;
};

// All query-member x candidate-member correspondence sets (6 for the 2+3 rig
// shape used by loop verification), in (q_member, c_member) row-major order.
std::vector<PairMatches> match_rigs(const std::vector<const Keyframe*>& rig_q,
                                    const std::vector<const Keyframe*>& rig_c,
                                    const MatcherConfig& config = {});

}  // namespace cslam
