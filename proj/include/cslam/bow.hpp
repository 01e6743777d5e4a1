#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cslam/keyframe.hpp"

namespace cslam {

// Sparse L1-normalized tf-idf histogram over vocabulary words.
using BowVector = std::map<std::uint32_t, double>;

// Similarity in [0, 1]: 1 - 0.5 * |v1 - v2|_1, which equals the sum of
// per-word minima for L1-normalized vectors.
double bow_score(const BowVector& a, const BowVector& b);

// Hierarchical k-means tree over binary descriptors (Hamming metric,
// majority-vote centroids). Leaves are the vocabulary words.
class Vocabulary {
 public:
  struct Node {
    std::vector<std::uint8_t> centroid;
    std::vector<std::uint32_t> children;  // empty for leaves
    std::int32_t word_id = -1;            // >= 0 for leaves
  };

  // Clusters the corpus with branching factor k and depth L. Deterministic
  // for a fixed seed. Throws InsufficientCorpus when fewer than k
  // descriptors are given.
  static Vocabulary train(const std::vector<std::vector<std::uint8_t>>& corpus, int k, int L,
                          std::uint64_t seed);

  std::uint32_t quantize(const std::uint8_t* descriptor) const;

  // tf-idf vector of a keyframe's descriptors, L1-normalized (empty input
  // gives an empty vector).
  BowVector vectorize(const DescriptorBlock& descriptors) const;

  int num_words() const { return static_cast<int>(idf_.size()); }
  int branching() const { return k_; }
  int depth() const { return levels_; }
  int descriptor_len() const { return descriptor_len_; }
  double idf(std::uint32_t word) const { return idf_[word]; }
  const std::vector<Node>& nodes() const { return nodes_; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::vector<std::uint8_t> serialize() const;
  static Vocabulary deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  int k_ = 0;
  int levels_ = 0;
  int descriptor_len_ = kBinary256Bytes;
  std::vector<Node> nodes_;  // nodes_[0] is the root
  std::vector<double> idf_;  // per word
};

struct QueryResult {
  KfId kf;
  double score = 0.0;
};

// Inverted-index keyframe database over a fixed vocabulary. add_keyframe
// needs exclusive access; queries may run concurrently between additions.
class KeyframeDatabase {
 public:
  explicit KeyframeDatabase(std::shared_ptr<const Vocabulary> vocabulary);

  // Scores the descriptors, stores the vector and indexes it. Throws
  // DuplicateKeyframe if kf_id was added before.
  BowVector add_keyframe(const KfId& kf_id, const DescriptorBlock& descriptors);

  // Up to top_k stored keyframes by descending score, never returning
  // excluded ids; candidates scoring below min_score_ratio * best are
  // dropped.
  std::vector<QueryResult> query(const BowVector& v, int top_k,
                                 const std::unordered_set<KfId, KfIdHash>& exclusion,
                                 double min_score_ratio = 0.5) const;

  const BowVector* bow_of(const KfId& kf_id) const;
  int size() const { return static_cast<int>(vectors_.size()); }
  std::vector<KfId> keyframe_ids() const;
  const Vocabulary& vocabulary() const { return *vocabulary_; }

 private:
  std::shared_ptr<const Vocabulary> vocabulary_;
  std::unordered_map<KfId, BowVector, KfIdHash> vectors_;
  // word -> (kf, weight of that word in kf's vector)
  std::unordered_map<std::uint32_t, std::vector<std::pair<KfId, double>>> inverted_;
};

}  // namespace cslam
