#include "cslam/matching.hpp"

#include <bit>
#include <cstring>

#include "cslam/errors.hpp"

namespace cslam {

int hamming_distance(const std::uint8_t* a, const std::uint8_t* b, int len_bytes) {
  int dist = 0;
  int i = 0;
  for (; i + 8 <= len_bytes; i += 8) {
    std::uint64_t wa, wb;
    std::memcpy(&wa, a + i, 8);
    std::memcpy(&wb, b + i, 8);
    dist += std::popcount(wa ^ wb);
  }
  for (; i < len_bytes; ++i) {
    dist += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  }
  return dist;
}

std::vector<Correspondence> match_pair(const DescriptorBlock& a, const DescriptorBlock& b,
                                       const MatcherConfig& config) {
  if (a.type != b.type || a.len_bytes != b.len_bytes) {
    throw DescriptorTypeMismatch("descriptor type/length differs between keyframes");
  }
  const int na = a.count();
  const int nb = b.count();
  std::vector<Correspondence> out;
  if (na == 0 || nb == 0) return out;

  // Best neighbor of each a-keypoint in b, then verify mutuality.
  std::vector<int> best_b(static_cast<std::size_t>(na), -1);
  std::vector<int> best_b_dist(static_cast<std::size_t>(na), INT32_MAX);
  for (int i = 0; i < na; ++i) {
    const std::uint8_t* da = a.at(i);
    for (int j = 0; j < nb; ++j) {
      const int d = hamming_distance(da, b.at(j), a.len_bytes);
      if (d < best_b_dist[static_cast<std::size_t>(i)]) {
        best_b_dist[static_cast<std::size_t>(i)] = d;
        best_b[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  std::vector<int> best_a(static_cast<std::size_t>(nb), -1);
  std::vector<int> best_a_dist(static_cast<std::size_t>(nb), INT32_MAX);
  for (int j = 0; j < nb; ++j) {
    const std::uint8_t* db = b.at(j);
    for (int i = 0; i < na; ++i) {
      const int d = hamming_distance(a.at(i), db, a.len_bytes);
      if (d < best_a_dist[static_cast<std::size_t>(j)]) {
        best_a_dist[static_cast<std::size_t>(j)] = d;
        best_a[static_cast<std::size_t>(j)] = i;
      }
    }
  }
  for (int i = 0; i < na; ++i) {
    const int j = best_b[static_cast<std::size_t>(i)];
    if (j >= 0 && best_a[static_cast<std::size_t>(j)] == i &&
        best_b_dist[static_cast<std::size_t>(i)] <= config.max_hamming) {
      out.push_back({i, j, best_b_dist[static_cast<std::size_t>(i)]});
    }
  }
  return out;
}

std::vector<PairMatches> match_rigs(const std::vector<const Keyframe*>& rig_q,
                                    const std::vector<const Keyframe*>& rig_c,
                                    const MatcherConfig& config) {
  std::vector<PairMatches> sets;
  sets.reserve(rig_q.size() * rig_c.size());
  for (std::size_t qi = 0; qi < rig_q.size(); ++qi) {
    for (std::size_t ci = 0; ci < rig_c.size(); ++ci) {
      PairMatches pm;
      pm.q_member = static_cast<int>(qi);
      pm.c_member = static_cast<int>(ci);
      pm.matches = match_pair(rig_q[qi]->descriptors, rig_c[ci]->descriptors, config);
      sets.push_back(std::move(pm));
    }
  }
  return sets;
}

}  // namespace cslam
