#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prvr/consolidation.hpp"
#include "prvr/locality.hpp"

namespace prvr {

/// A video's (or query's) raw feature rows plus how many of them are real.
struct FeatureSequence {
  Matrix features;  // length x d_o
  int valid_length = 0;
  std::string source_id;
};

/// Frame-level and clip-level embeddings for one video.
struct BranchEmbeddings {
  Matrix frame;  // M_f x d, rows past valid_frames are zero
  Matrix clip;   // M_c x d
  int valid_frames = 0;
};

struct TextEmbedding {
  Matrix words;     // N x d
  Matrix sentence;  // 1 x d, a convex combination of valid word rows
};

struct TextParams {
  Matrix fc_w, fc_b;  // d_o -> d
  Matrix pos;         // N_max x d learned positional embeddings
  BlockParams block;
  Matrix sap_b;  // 1 x d pooling vector
};

struct TextVars {
  ad::Var fc_w, fc_b, pos, sap_b;
  BlockVars block;
};

inline TextVars lift_text(ad::Tape& t, const TextParams& p) {
  TextVars v;
  v.fc_w = t.leaf(p.fc_w);
  v.fc_b = t.leaf(p.fc_b);
  v.pos = t.leaf(p.pos);
  v.sap_b = t.leaf(p.sap_b);
  v.block = lift_block(t, p.block);
  return v;
}

/// One video branch: input projection, K constrained blocks, aggregation.
struct BranchParams {
  Matrix fc_w, fc_b;  // d_o -> d
  std::vector<BlockParams> blocks;
  TcmParams tcm;
  WeightedAggParams weighted;
  DynamicAggParams dynamic;
};

struct BranchVars {
  ad::Var fc_w, fc_b;
  std::vector<BlockVars> blocks;
  TcmVars tcm;
  ad::Var weighted_logits;
  DynamicAggVars dynamic;
};

inline BranchVars lift_branch(ad::Tape& t, const BranchParams& p) {
  BranchVars v;
  v.fc_w = t.leaf(p.fc_w);
  v.fc_b = t.leaf(p.fc_b);
  v.blocks.reserve(p.blocks.size());
  for (const auto& b : p.blocks) v.blocks.push_back(lift_block(t, b));
  v.tcm = lift_tcm(t, p.tcm);
  v.weighted_logits = t.leaf(p.weighted.logits);
  v.dynamic = lift_dynamic(t, p.dynamic);
  return v;
}

/// Simple attention pooling: l = softmax(b Q^T) over valid rows, q = l Q.
inline ad::Var attention_pool(ad::Tape& t, ad::Var q, ad::Var b,
                              const std::vector<std::uint8_t>& keep) {
  check_shape(static_cast<int>(keep.size()) == t.val(q).rows, "attention_pool: validity length");
  bool any = false;
  for (auto k : keep) any = any || k;
  if (!any) throw std::invalid_argument("attention_pool: no valid rows");
  ad::Var scores = t.matmul_nt(b, q);  // 1 x N
  const Matrix kmask = detail::key_mask(1, keep);
  ad::Var l = t.softmax_rows(scores, &kmask);
  return t.matmul(l, q);
}

/// Mean-pool the valid frames into m_c contiguous near-even segments.
/// Segment j covers frames [floor(j*L/m_c), floor((j+1)*L/m_c)); when L < m_c
/// a segment can degenerate to the single frame floor(j*L/m_c).
inline Matrix downsample_mean(const FeatureSequence& f, int m_c) {
  if (m_c < 1) throw std::invalid_argument("downsample_mean: m_c must be >= 1");
  const int len = f.valid_length;
  if (len < 1) throw std::invalid_argument("downsample_mean: empty sequence");
  Matrix out(m_c, f.features.cols);
  for (int j = 0; j < m_c; ++j) {
    const int lo = static_cast<int>((static_cast<long long>(j) * len) / m_c);
    int hi = static_cast<int>((static_cast<long long>(j + 1) * len) / m_c);
    if (hi <= lo) hi = lo + 1;
    for (int i = lo; i < hi; ++i)
      for (int c = 0; c < f.features.cols; ++c) out.at(j, c) += f.features.at(i, c);
    for (int c = 0; c < f.features.cols; ++c) out.at(j, c) /= (hi - lo);
  }
  return out;
}

namespace detail {

/// Copy into a rows x cols buffer, zeroing everything past valid rows.
inline Matrix pad_to(const Matrix& m, int valid, int rows) {
  check_shape(valid >= 1 && valid <= rows, "pad_to: bad valid length");
  check_shape(m.rows >= valid, "pad_to: fewer rows than valid length");
  Matrix out(rows, m.cols);
  for (int i = 0; i < valid; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j);
  return out;
}

inline std::vector<std::uint8_t> prefix_mask(int valid, int rows) {
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(rows), 0);
  for (int i = 0; i < valid; ++i) keep[i] = 1;
  return keep;
}

}  // namespace detail

/// FC -> positional embeddings -> encoder layer -> attention pooling.
inline TextEmbedding encode_text(ad::Tape& t, const FeatureSequence& feats, const TextVars& p,
                                 int n_max, ad::Var* words_out = nullptr,
                                 ad::Var* sentence_out = nullptr) {
  if (feats.valid_length < 1) throw std::invalid_argument("encode_text: empty query");
  if (feats.valid_length > n_max) throw std::invalid_argument("encode_text: query too long");
  const Matrix padded = detail::pad_to(feats.features, feats.valid_length, n_max);
  const auto keep = detail::prefix_mask(feats.valid_length, n_max);
  ad::Var x = t.add_rowvec(t.matmul(t.leaf(padded), p.fc_w), p.fc_b);
  x = t.add(x, p.pos);
  ad::Var q = encoder_block(t, x, p.block, nullptr, keep);
  ad::Var s = attention_pool(t, q, p.sap_b, keep);
  if (words_out) *words_out = q;
  if (sentence_out) *sentence_out = s;
  return TextEmbedding{t.val(q), t.val(s)};
}

/// K parallel constrained blocks over one branch input, then aggregation.
/// `masks` holds one locality matrix per block (nullptr entries mean vanilla).
inline ad::Var multi_scale_blocks(ad::Tape& t, ad::Var x, const BranchVars& p,
                                  const std::vector<const Matrix*>& masks, Aggregation agg,
                                  const std::vector<std::uint8_t>& keep) {
  check_shape(!p.blocks.empty() && p.blocks.size() == masks.size(),
              "multi_scale_blocks: blocks/masks mismatch");
  std::vector<ad::Var> stack;
  stack.reserve(p.blocks.size());
  for (std::size_t k = 0; k < p.blocks.size(); ++k)
    stack.push_back(encoder_block(t, x, p.blocks[k], masks[k], keep));
  switch (agg) {
    case Aggregation::kTcm: {
      ad::Var w = tcm_weights(t, p.tcm, stack, keep);
      return tcm_aggregate(t, stack, w, p.tcm.tau);
    }
    case Aggregation::kAverage:
      return aggregate_avg(t, stack);
    case Aggregation::kWeighted:
      return aggregate_weighted(t, stack, p.weighted_logits, p.tcm.tau);
    case Aggregation::kDynamic:
      return aggregate_dynamic(t, stack, x, p.dynamic, keep);
  }
  throw std::logic_error("multi_scale_blocks: bad aggregation");
}

struct VideoEncodeVars {
  ad::Var frame;
  ad::Var clip;
};

/// Frame branch: FC + multi-scale blocks on the padded frames.
/// Clip branch: mean-pool downsample to M_c, FC, multi-scale blocks.
inline BranchEmbeddings encode_video(ad::Tape& t, const FeatureSequence& feats,
                                     const BranchVars& frame_branch, const BranchVars& clip_branch,
                                     const std::vector<const Matrix*>& frame_masks,
                                     const std::vector<const Matrix*>& clip_masks, Aggregation agg,
                                     int m_f, int m_c, VideoEncodeVars* vars = nullptr) {
  if (feats.valid_length < 1) throw std::invalid_argument("encode_video: empty video");
  if (feats.valid_length > m_f) throw std::invalid_argument("encode_video: too many frames");
  const Matrix padded = detail::pad_to(feats.features, feats.valid_length, m_f);
  const auto keep_f = detail::prefix_mask(feats.valid_length, m_f);

  ad::Var xf = t.add_rowvec(t.matmul(t.leaf(padded), frame_branch.fc_w), frame_branch.fc_b);
  xf = t.zero_rows(xf, keep_f);
  ad::Var vf = multi_scale_blocks(t, xf, frame_branch, frame_masks, agg, keep_f);

  const Matrix clips = downsample_mean(feats, m_c);
  const auto keep_c = detail::prefix_mask(m_c, m_c);
  ad::Var xc = t.add_rowvec(t.matmul(t.leaf(clips), clip_branch.fc_w), clip_branch.fc_b);
  ad::Var vc = multi_scale_blocks(t, xc, clip_branch, clip_masks, agg, keep_c);

  if (vars) *vars = VideoEncodeVars{vf, vc};
  return BranchEmbeddings{t.val(vf), t.val(vc), feats.valid_length};
}

}  // namespace prvr
