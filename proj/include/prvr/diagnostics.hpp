#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "prvr/model.hpp"

namespace prvr {

/// Where a video's queries land on its clip embeddings, and how spread out
/// they are. Zero variance across several queries is the collapse signature.
struct PositioningRecord {
  std::string video_id;
  std::vector<int> argmax_clip;
  double variance = 0.0;
};

/// Argmax-cosine clip index per query (first index wins ties), then the
/// population variance of those indices.
inline PositioningRecord positioning_variance(const Matrix& clip_embeddings,
                                              const Matrix& queries) {
  if (clip_embeddings.rows < 1 || queries.rows < 1)
    throw std::invalid_argument("positioning_variance: empty inputs");
  check_shape(clip_embeddings.cols == queries.cols, "positioning_variance: dim mismatch");
  PositioningRecord rec;
  for (int qi = 0; qi < queries.rows; ++qi) {
    int best = 0;
    double best_cos = -2.0;
    for (int c = 0; c < clip_embeddings.rows; ++c) {
      const double v = cosine(queries.row(qi), clip_embeddings.row(c), queries.cols);
      if (v > best_cos) {
        best_cos = v;
        best = c;
      }
    }
    rec.argmax_clip.push_back(best);
  }
  double mean = 0.0;
  for (int i : rec.argmax_clip) mean += i;
  mean /= rec.argmax_clip.size();
  double var = 0.0;
  for (int i : rec.argmax_clip) var += (i - mean) * (i - mean);
  rec.variance = var / rec.argmax_clip.size();
  return rec;
}

/// Per-clip cosine similarities for one query embedding.
inline std::vector<double> similarity_heatmap(const std::vector<double>& q,
                                              const Matrix& clip_embeddings) {
  if (clip_embeddings.rows < 1) throw std::invalid_argument("similarity_heatmap: no clips");
  check_shape(static_cast<int>(q.size()) == clip_embeddings.cols, "similarity_heatmap: dim");
  std::vector<double> out;
  out.reserve(clip_embeddings.rows);
  for (int c = 0; c < clip_embeddings.rows; ++c)
    out.push_back(cosine(q.data(), clip_embeddings.row(c), clip_embeddings.cols));
  return out;
}

struct CollapseReport {
  int videos = 0;  // multi-query videos examined
  double mean_variance = 0.0;
  double median_variance = 0.0;
  std::vector<double> bin_edges;   // histogram over positioning variance
  std::vector<int> bin_counts;
  std::vector<PositioningRecord> records;
};

/// Positioning-variance distribution over every multi-query video of the
/// chosen split.
inline CollapseReport collapse_report(const Model& model, const Corpus& corpus, bool test_split) {
  CollapseReport rep;
  rep.bin_edges = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  rep.bin_counts.assign(rep.bin_edges.size(), 0);  // last bin is open-ended
  std::vector<double> variances;
  for (int v : corpus.video_indices(test_split)) {
    const std::vector<int> qs = corpus.queries_of_video(v);
    if (qs.size() < 2) continue;
    const BranchEmbeddings emb = encode_video(model, corpus.videos[v]);
    Matrix queries(static_cast<int>(qs.size()), model.cfg.d);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const TextEmbedding te = encode_text(model, corpus.queries[qs[i]]);
      for (int j = 0; j < model.cfg.d; ++j) queries.at(static_cast<int>(i), j) = te.sentence.at(0, j);
    }
    PositioningRecord rec = positioning_variance(emb.clip, queries);
    rec.video_id = corpus.videos[v].source_id;
    variances.push_back(rec.variance);
    std::size_t bin = 0;
    while (bin + 1 < rep.bin_edges.size() && rec.variance >= rep.bin_edges[bin + 1]) ++bin;
    rep.bin_counts[bin] += 1;
    rep.records.push_back(std::move(rec));
  }
  if (variances.empty()) throw std::invalid_argument("collapse_report: no multi-query videos");
  rep.videos = static_cast<int>(variances.size());
  for (double v : variances) rep.mean_variance += v;
  rep.mean_variance /= variances.size();
  std::sort(variances.begin(), variances.end());
  const std::size_t mid = variances.size() / 2;
  rep.median_variance = variances.size() % 2 ? variances[mid]
                                             : 0.5 * (variances[mid - 1] + variances[mid]);
  return rep;
}

}  // namespace prvr
