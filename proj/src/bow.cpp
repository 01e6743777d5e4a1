#include "cslam/bow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>

#include "cslam/errors.hpp"
#include "cslam/matching.hpp"
#include "cslam/rng.hpp"

namespace cslam {

double bow_score(const BowVector& a, const BowVector& b) {
  double s = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (ia->first == ib->first) {
      s += std::min(ia->second, ib->second);
      ++ia;
      ++ib;
    } else if (ia->first < ib->first) {
      ++ia;
    } else {
      ++ib;
    }
  }
  return s;
}

namespace {

std::vector<std::uint8_t> majority_centroid(const std::vector<std::vector<std::uint8_t>>& corpus,
                                            const std::vector<int>& members, int len) {
  std::vector<int> ones(static_cast<std::size_t>(len) * 8, 0);
  for (int idx : members) {
    const auto& d = corpus[static_cast<std::size_t>(idx)];
    for (int byte = 0; byte < len; ++byte) {
      const std::uint8_t v = d[static_cast<std::size_t>(byte)];
      for (int bit = 0; bit < 8; ++bit) {
        if (v & (1u << bit)) ++ones[static_cast<std::size_t>(byte * 8 + bit)];
      }
    }
  }
  const int n = static_cast<int>(members.size());
  std::vector<std::uint8_t> centroid(static_cast<std::size_t>(len), 0);
  for (int byte = 0; byte < len; ++byte) {
    std::uint8_t v = 0;
    for (int bit = 0; bit < 8; ++bit) {
      if (2 * ones[static_cast<std::size_t>(byte * 8 + bit)] > n) v |= (1u << bit);
    }
    centroid[static_cast<std::size_t>(byte)] = v;
  }
  return centroid;
}

// k-means over binary descriptors with majority-vote centroid updates.
// Returns non-empty clusters; deterministic for a fixed rng state.
std::vector<std::vector<int>> kmeans_binary(const std::vector<std::vector<std::uint8_t>>& corpus,
                                            const std::vector<int>& members, int k, int len,
                                            Rng& rng) {
  // Initial centroids: up to k distinct descriptor values sampled from the set.
  std::vector<std::vector<std::uint8_t>> centroids;
  {
    std::vector<int> order = members;
    rng.shuffle(order);
    for (int idx : order) {
      const auto& d = corpus[static_cast<std::size_t>(idx)];
      bool dup = false;
      for (const auto& c : centroids) {
        if (std::memcmp(c.data(), d.data(), static_cast<std::size_t>(len)) == 0) {
          dup = true;
          break;
        }
      }
      if (!dup) {
        centroids.push_back(d);
        if (static_cast<int>(centroids.size()) == k) break;
      }
    }
  }
  if (centroids.size() <= 1) {
    return {members};
  }

  std::vector<int> assignment(members.size(), -1);
  std::vector<std::vector<int>> clusters;
  for (int iter = 0; iter < 10; ++iter) {
    clusters.assign(centroids.size(), {});
    bool changed = false;
    for (std::size_t mi = 0; mi < members.size(); ++mi) {
      const auto& d = corpus[static_cast<std::size_t>(members[mi])];
      int best = 0;
      int best_dist = INT32_MAX;
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const int dist = hamming_distance(d.data(), centroids[c].data(), len);
        if (dist < best_dist) {
          best_dist = dist;
          best = static_cast<int>(c);
        }
      }
      if (assignment[mi] != best) {
        assignment[mi] = best;
        changed = true;
      }
      clusters[static_cast<std::size_t>(best)].push_back(members[mi]);
    }
    if (!changed) break;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (!clusters[c].empty()) centroids[c] = majority_centroid(corpus, clusters[c], len);
    }
  }
  std::erase_if(clusters, [](const std::vector<int>& c) { return c.empty(); });
  return clusters;
}

}  // namespace

Vocabulary Vocabulary::train(const std::vector<std::vector<std::uint8_t>>& corpus, int k, int L,
                             std::uint64_t seed) {
  if (k < 2 || L < 1) throw InsufficientCorpus("branching factor must be >= 2 and depth >= 1");
  if (static_cast<int>(corpus.size()) < k) {
    throw InsufficientCorpus("corpus smaller than branching factor k");
  }
  const int len = static_cast<int>(corpus.front().size());
  for (const auto& d : corpus) {
    if (static_cast<int>(d.size()) != len) {
      throw InsufficientCorpus("corpus descriptors differ in length");
    }
  }

  Vocabulary voc;
  voc.k_ = k;
  voc.levels_ = L;
  voc.descriptor_len_ = len;

  Rng rng(seed);

  // Iterative breadth-first build so serialization order equals build order.
  struct Pending {
    std::uint32_t node;
    std::vector<int> members;
    int depth;
  };
  voc.nodes_.emplace_back();  // root
  std::vector<int> all(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) all[i] = static_cast<int>(i);
  std::deque<Pending> queue;
  queue.push_back({0, std::move(all), 0});

  std::vector<std::vector<int>> leaf_members;  // by word id
  while (!queue.empty()) {
    Pending cur = std::move(queue.front());
    queue.pop_front();
    const bool is_leaf = cur.depth == L || cur.members.size() <= 1;
    std::vector<std::vector<int>> clusters;
    if (!is_leaf) clusters = kmeans_binary(corpus, cur.members, k, len, rng);
    if (is_leaf || clusters.size() <= 1) {
      Node& node = voc.nodes_[cur.node];
      node.word_id = static_cast<std::int32_t>(leaf_members.size());
      if (node.centroid.empty()) node.centroid = majority_centroid(corpus, cur.members, len);
      leaf_members.push_back(std::move(cur.members));
      continue;
    }
    for (auto& cluster : clusters) {
      const auto child = static_cast<std::uint32_t>(voc.nodes_.size());
      voc.nodes_.emplace_back();
      voc.nodes_.back().centroid = majority_centroid(corpus, cluster, len);
      voc.nodes_[cur.node].children.push_back(child);
      queue.push_back({child, std::move(cluster), cur.depth + 1});
    }
  }

  // idf from the training corpus, one "document" per descriptor. Every leaf
  // holds at least one training descriptor, so weights are finite and >= 0.
  voc.idf_.resize(leaf_members.size());
  const double n_total = static_cast<double>(corpus.size());
  for (std::size_t w = 0; w < leaf_members.size(); ++w) {
    voc.idf_[w] = std::log(n_total / static_cast<double>(leaf_members[w].size()));
  }
  return voc;
}

std::uint32_t Vocabulary::quantize(const std::uint8_t* descriptor) const {
  const Node* node = &nodes_[0];
  while (!node->children.empty()) {
    int best_dist = INT32_MAX;
    const Node* best = nullptr;
    for (std::uint32_t child : node->children) {
      const Node& c = nodes_[child];
      const int d = hamming_distance(descriptor, c.centroid.data(), descriptor_len_);
      if (d < best_dist) {
        best_dist = d;
        best = &c;
      }
    }
    node = best;
  }
  return static_cast<std::uint32_t>(node->word_id);
}

BowVector Vocabulary::vectorize(const DescriptorBlock& descriptors) const {
  BowVector v;
  if (descriptors.len_bytes != descriptor_len_) {
    throw DescriptorTypeMismatch("descriptor length does not match vocabulary");
  }
  const int n = descriptors.count();
  if (n == 0) return v;
  for (int i = 0; i < n; ++i) {
    const std::uint32_t w = quantize(descriptors.at(i));
    v[w] += idf_[w] / static_cast<double>(n);
  }
  double norm = 0.0;
  for (const auto& [w, weight] : v) norm += weight;
  if (norm > 0.0) {
    for (auto& [w, weight] : v) weight /= norm;
  } else {
    // All-zero idf (degenerate vocabulary): fall back to plain tf.
    for (auto& [w, weight] : v) weight = 1.0 / static_cast<double>(v.size());
  }
  return v;
}

namespace {

constexpr char kVocabMagic[4] = {'C', 'G', 'V', 'C'};
constexpr std::uint8_t kVocabVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw VocabularyIoError("truncated vocabulary data");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> Vocabulary::serialize() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kVocabMagic, kVocabMagic + 4);
  put<std::uint8_t>(out, kVocabVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(k_));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(levels_));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(descriptor_len_));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(nodes_.size()));
  // Nodes are already stored breadth-first; the root's centroid slot is
  // written as zeros.
  std::vector<std::uint8_t> zero(static_cast<std::size_t>(descriptor_len_), 0);
  for (const Node& n : nodes_) {
    const auto& c = n.centroid.empty() ? zero : n.centroid;
    out.insert(out.end(), c.begin(), c.end());
    put<std::uint16_t>(out, static_cast<std::uint16_t>(n.children.size()));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(idf_.size()));
  for (double w : idf_) put<float>(out, static_cast<float>(w));
  return out;
}

Vocabulary Vocabulary::deserialize(const std::vector<std::uint8_t>& bytes) {
  std::size_t off = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kVocabMagic, 4) != 0) {
    throw VocabularyIoError("bad vocabulary magic");
  }
  off = 4;
  const auto version = get<std::uint8_t>(bytes, off);
  if (version != kVocabVersion) throw VocabularyIoError("unsupported vocabulary version");
  Vocabulary voc;
  voc.k_ = get<std::uint16_t>(bytes, off);
  voc.levels_ = get<std::uint8_t>(bytes, off);
  voc.descriptor_len_ = get<std::uint8_t>(bytes, off);
  const auto node_count = get<std::uint32_t>(bytes, off);
  voc.nodes_.resize(node_count);
  std::vector<std::uint16_t> child_counts(node_count);
  for (std::uint32_t i = 0; i < node_count; ++i) {
    if (off + static_cast<std::size_t>(voc.descriptor_len_) > bytes.size()) {
      throw VocabularyIoError("truncated vocabulary node");
    }
    voc.nodes_[i].centroid.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                  bytes.begin() + static_cast<std::ptrdiff_t>(off) +
                                      voc.descriptor_len_);
    off += static_cast<std::size_t>(voc.descriptor_len_);
    child_counts[i] = get<std::uint16_t>(bytes, off);
  }
  // Children of node i are the next child_counts[i] nodes in BFS order.
  std::uint32_t next = 1;
  std::int32_t word = 0;
  for (std::uint32_t i = 0; i < node_count; ++i) {
    for (std::uint16_t c = 0; c < child_counts[i]; ++c) {
      if (next >= node_count) throw VocabularyIoError("inconsistent vocabulary tree");
      voc.nodes_[i].children.push_back(next++);
    }
    if (child_counts[i] == 0) voc.nodes_[i].word_id = word++;
  }
  if (next != node_count) throw VocabularyIoError("inconsistent vocabulary tree");
  const auto leaf_count = get<std::uint32_t>(bytes, off);
  if (leaf_count != static_cast<std::uint32_t>(word)) {
    throw VocabularyIoError("leaf count mismatch");
  }
  voc.idf_.resize(leaf_count);
  for (std::uint32_t w = 0; w < leaf_count; ++w) voc.idf_[w] = get<float>(bytes, off);
  return voc;
}

void Vocabulary::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VocabularyIoError("cannot open vocabulary file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw VocabularyIoError("failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabularyIoError("cannot open vocabulary file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

KeyframeDatabase::KeyframeDatabase(std::shared_ptr<const Vocabulary> vocabulary)
    : vocabulary_(std::move(vocabulary)) {}

BowVector KeyframeDatabase::add_keyframe(const KfId& kf_id, const DescriptorBlock& descriptors) {
  if (vectors_.contains(kf_id)) throw DuplicateKeyframe("keyframe already in database");
  BowVector v = vocabulary_->vectorize(descriptors);
  for (const auto& [word, weight] : v) {
    inverted_[word].emplace_back(kf_id, weight);
  }
  vectors_.emplace(kf_id, v);
  return v;
}

std::vector<QueryResult> KeyframeDatabase::query(
    const BowVector& v, int top_k, const std::unordered_set<KfId, KfIdHash>& exclusion,
    double min_score_ratio) const {
  std::unordered_map<KfId, double, KfIdHash> acc;
  for (const auto& [word, q_weight] : v) {
    const auto it = inverted_.find(word);
    if (it == inverted_.end()) continue;
    for (const auto& [kf, weight] : it->second) {
      if (exclusion.contains(kf)) continue;
      acc[kf] += std::min(q_weight, weight);
    }
  }
  std::vector<QueryResult> results;
  results.reserve(acc.size());
  for (const auto& [kf, score] : acc) results.push_back({kf, score});
  std::sort(results.begin(), results.end(), [](const QueryResult& a, const QueryResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.kf < b.kf;  // deterministic order among ties
  });
  if (!results.empty()) {
    const double floor = results.front().score * min_score_ratio;
    std::erase_if(results, [floor](const QueryResult& r) { return r.score < floor; });
  }
  if (static_cast<int>(results.size()) > top_k) results.resize(static_cast<std::size_t>(top_k));
  return results;
}

const BowVector* KeyframeDatabase::bow_of(const KfId& kf_id) const {
  const auto it = vectors_.find(kf_id);
  return it == vectors_.end() ? nullptr : &it->second;
}

std::vector<KfId> KeyframeDatabase::keyframe_ids() const {
  std::vector<KfId> ids;
  ids.reserve(vectors_.size());
  for (const auto& [kf, v] : vectors_) ids.push_back(kf);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace cslam
