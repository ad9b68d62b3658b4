#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prvr/numerics.hpp"
#include "prvr/serialize.hpp"

namespace prvr {

/// Offline store of per-video branch embeddings, kept in single precision.
/// The fingerprint binds the index to the checkpoint configuration that
/// produced it.
struct RetrievalIndex {
  struct Entry {
    std::string id;
    int valid_frames = 0;
    std::vector<float> frame;  // m_f x d row-major
    std::vector<float> clip;   // m_c x d
  };

  int d = 0;
  int m_f = 0;
  int m_c = 0;
  std::uint64_t fingerprint = 0;
  std::vector<Entry> entries;

  void add(Entry e) {
    for (const auto& ex : entries)
      if (ex.id == e.id) throw std::invalid_argument("RetrievalIndex: duplicate id " + e.id);
    entries.push_back(std::move(e));
  }

  /// Embedding payload alone, excluding ids and bookkeeping.
  std::uint64_t payload_bytes() const {
    return static_cast<std::uint64_t>(entries.size()) *
           (static_cast<std::uint64_t>(m_f) + m_c) * d * sizeof(float);
  }
};

struct MetricsReport {
  double r1 = 0, r5 = 0, r10 = 0, r100 = 0;
  double sum_r = 0;
  int query_count = 0;
};

/// Max cosine between q and the first `valid` rows.
inline double branch_similarity(const double* q, const float* rows, int valid, int d) {
  if (valid < 1) throw std::invalid_argument("branch_similarity: no valid rows");
  const double qn = norm2(q, d);
  if (qn == 0.0) throw std::invalid_argument("branch_similarity: zero query");
  double best = -2.0;
  for (int i = 0; i < valid; ++i) {
    const float* r = rows + static_cast<std::size_t>(i) * d;
    double dotv = 0.0, nn = 0.0;
    for (int j = 0; j < d; ++j) {
      dotv += q[j] * r[j];
      nn += static_cast<double>(r[j]) * r[j];
    }
    if (nn == 0.0) continue;
    best = std::max(best, dotv / (qn * std::sqrt(nn)));
  }
  if (best < -1.5) throw std::invalid_argument("branch_similarity: all rows zero");
  return best;
}

inline double branch_similarity(const std::vector<double>& q, const Matrix& emb, int valid) {
  if (valid < 1 || valid > emb.rows) throw std::invalid_argument("branch_similarity: bad valid count");
  double best = -2.0;
  bool any = false;
  for (int i = 0; i < valid; ++i) {
    if (norm2(emb.row(i), emb.cols) == 0.0) continue;
    best = std::max(best, cosine(q.data(), emb.row(i), emb.cols));
    any = true;
  }
  if (!any) throw std::invalid_argument("branch_similarity: all rows zero");
  return best;
}

/// Convex interpolation of the frame- and clip-level scores.
inline double overall_similarity(double s_f, double s_c, double alpha_f, double alpha_c) {
  if (alpha_f < 0 || alpha_f > 1 || alpha_c < 0 || alpha_c > 1 ||
      std::abs(alpha_f + alpha_c - 1.0) > 1e-12)
    throw std::invalid_argument("overall_similarity: weights must lie on the simplex");
  return alpha_f * s_f + alpha_c * s_c;
}

struct RankedVideo {
  std::string id;
  double score = 0.0;
};

/// Scores every indexed video and sorts descending; ties break toward the
/// lexicographically smaller id, so rankings are insertion-order invariant.
inline std::vector<RankedVideo> rank_videos(const std::vector<double>& q,
                                            const RetrievalIndex& index, double alpha_f,
                                            double alpha_c) {
  if (index.entries.empty()) throw std::invalid_argument("rank_videos: empty index");
  if (static_cast<int>(q.size()) != index.d) throw std::invalid_argument("rank_videos: dim mismatch");
  std::vector<RankedVideo> out;
  out.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    const double sf = branch_similarity(q.data(), e.frame.data(), e.valid_frames, index.d);
    const double sc = branch_similarity(q.data(), e.clip.data(), index.m_c, index.d);
    out.push_back({e.id, overall_similarity(sf, sc, alpha_f, alpha_c)});
  }
  std::sort(out.begin(), out.end(), [](const RankedVideo& a, const RankedVideo& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

/// Percentage of queries whose true video appears in the top k.
inline double recall_at_k(const std::vector<std::vector<std::string>>& rankings,
                          const std::vector<std::string>& truth, int k) {
  if (rankings.size() != truth.size() || rankings.empty())
    throw std::invalid_argument("recall_at_k: rankings/truth mismatch");
  int hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    bool present = false;
    for (const auto& id : r)
      if (id == truth[i]) {
        present = true;
        break;
      }
    if (!present) throw std::invalid_argument("recall_at_k: ground truth missing from ranking");
    const int top = std::min<int>(k, static_cast<int>(r.size()));
    for (int j = 0; j < top; ++j)
      if (r[j] == truth[i]) {
        ++hits;
        break;
      }
  }
  return 100.0 * hits / static_cast<double>(rankings.size());
}

inline MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& rankings,
                                     const std::vector<std::string>& truth) {
  MetricsReport r;
  r.r1 = recall_at_k(rankings, truth, 1);
  r.r5 = recall_at_k(rankings, truth, 5);
  r.r10 = recall_at_k(rankings, truth, 10);
  r.r100 = recall_at_k(rankings, truth, 100);
  r.sum_r = r.r1 + r.r5 + r.r10 + r.r100;
  r.query_count = static_cast<int>(rankings.size());
  return r;
}

inline double sum_recall(const MetricsReport& r) { return r.r1 + r.r5 + r.r10 + r.r100; }

namespace detail {
constexpr char kIndexMagic[8] = {'P', 'R', 'V', 'R', 'I', 'D', 'X', '1'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace detail

inline void save_index(const RetrievalIndex& index, const std::string& path) {
  io::Writer w;
  w.put_bytes(detail::kIndexMagic, sizeof(detail::kIndexMagic));
  w.put_u32(detail::kIndexVersion);
  w.put_u32(static_cast<std::uint32_t>(index.d));
  w.put_u32(static_cast<std::uint32_t>(index.m_f));
  w.put_u32(static_cast<std::uint32_t>(index.m_c));
  w.put_u64(index.fingerprint);
  w.put_u32(static_cast<std::uint32_t>(index.entries.size()));
  for (const auto& e : index.entries) {
    w.put_string(e.id);
    w.put_u32(static_cast<std::uint32_t>(e.valid_frames));
    w.put_bytes(e.frame.data(), e.frame.size() * sizeof(float));
    w.put_bytes(e.clip.data(), e.clip.size() * sizeof(float));
  }
  w.write_file(path);
}

inline RetrievalIndex load_index(const std::string& path) {
  io::Reader r(path);
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kIndexMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not an index file: " + path);
  const std::uint32_t version = r.get_u32();
  if (version != detail::kIndexVersion)
    throw std::runtime_error("unsupported index version " + std::to_string(version));
  RetrievalIndex idx;
  idx.d = static_cast<int>(r.get_u32());
  idx.m_f = static_cast<int>(r.get_u32());
  idx.m_c = static_cast<int>(r.get_u32());
  idx.fingerprint = r.get_u64();
  const std::uint32_t n = r.get_u32();
  idx.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    RetrievalIndex::Entry e;
    e.id = r.get_string();
    e.valid_frames = static_cast<int>(r.get_u32());
    e.frame.resize(static_cast<std::size_t>(idx.m_f) * idx.d);
    r.get_bytes(e.frame.data(), e.frame.size() * sizeof(float));
    e.clip.resize(static_cast<std::size_t>(idx.m_c) * idx.d);
    r.get_bytes(e.clip.data(), e.clip.size() * sizeof(float));
    idx.entries.push_back(std::move(e));
  }
  return idx;
}

}  // namespace prvr
