#pragma once

#include <stdexcept>
#include <vector>

#include "prvr/assignment.hpp"
#include "prvr/autodiff.hpp"

namespace prvr {

struct LossConfig {
  double margin = 0.2;       // triplet margin m
  double qdl_gamma = 1.0;    // focusing factor
  double qdl_alpha = 32.0;   // scaling factor
  double qdl_delta = 0.2;    // margin factor
  double lambda_clip_nce = 2e-2;
  double lambda_frame_nce = 4e-2;
  double lambda_div = 3e-3;
  double lambda_om = 1.1e-1;
  double nce_temperature = 0.07;

  void validate() const {
    if (!(qdl_gamma > 0.0) || !(qdl_alpha > 0.0) || !(qdl_delta > 0.0))
      throw std::invalid_argument("LossConfig: gamma, alpha, delta must be > 0");
    if (margin < 0.0) throw std::invalid_argument("LossConfig: margin must be >= 0");
    if (!(nce_temperature > 0.0)) throw std::invalid_argument("LossConfig: temperature must be > 0");
    if (lambda_clip_nce < 0 || lambda_frame_nce < 0 || lambda_div < 0 || lambda_om < 0)
      throw std::invalid_argument("LossConfig: loss weights must be >= 0");
  }
};

namespace detail {

/// 0/1 matrix marking usable negatives plus the diagonal positives.
inline Matrix negatives_with_diag(const Matrix& positive) {
  Matrix m(positive.rows, positive.cols);
  for (int i = 0; i < positive.rows; ++i)
    for (int j = 0; j < positive.cols; ++j) m.at(i, j) = positive.at(i, j) == 0.0 ? 1.0 : 0.0;
  for (int i = 0; i < positive.rows; ++i) m.at(i, i) = 1.0;
  return m;
}

inline Matrix negatives_only(const Matrix& positive) {
  Matrix m(positive.rows, positive.cols);
  for (int i = 0; i < positive.rows; ++i)
    for (int j = 0; j < positive.cols; ++j) m.at(i, j) = positive.at(i, j) == 0.0 ? 1.0 : 0.0;
  return m;
}

constexpr double kNoNegative = -1e9;  // keeps empty-negative hinges inactive but finite

}  // namespace detail

/// Hinge ranking loss with the hardest in-batch negative on each side.
/// `s` is an n x n similarity matrix (rows = texts, columns = videos) whose
/// diagonal holds each pair's positive; `positive` marks all relevant pairs.
inline ad::Var triplet_loss(ad::Tape& t, ad::Var s, const Matrix& positive, double margin) {
  const Matrix& sv = t.val(s);
  check_shape(sv.rows == sv.cols && sv.same_shape(positive), "triplet_loss: square batch required");
  if (sv.rows < 2) throw std::invalid_argument("triplet_loss: need a batch of at least 2");
  const Matrix neg = detail::negatives_only(positive);
  const Matrix neg_t = transposed(neg);
  ad::Var pos = t.diag(s);
  ad::Var hardest_video = t.row_max(s, &neg, detail::kNoNegative);  // per text, worst other video
  ad::Var hardest_text =
      t.row_max(t.transpose(s), &neg_t, detail::kNoNegative);  // per video, worst other text
  ad::Var h1 = t.relu(t.add_const(t.sub(hardest_text, pos), margin));
  ad::Var h2 = t.relu(t.add_const(t.sub(hardest_video, pos), margin));
  return t.add(t.mean_all(h1), t.mean_all(h2));
}

/// Symmetric InfoNCE over exponentiated similarities exp(s/temperature);
/// other positives of an anchor are excluded from the denominator.
inline ad::Var infonce_loss(ad::Tape& t, ad::Var s, const Matrix& positive, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("infonce_loss: temperature must be > 0");
  const Matrix& sv = t.val(s);
  check_shape(sv.rows == sv.cols && sv.same_shape(positive), "infonce_loss: square batch required");
  if (sv.rows < 2) throw std::invalid_argument("infonce_loss: need a batch of at least 2");
  const Matrix mask = detail::negatives_with_diag(positive);
  ad::Var scaled = t.scale(s, 1.0 / temperature);
  ad::Var e = t.exp_elem(scaled);
  ad::Var masked = t.mul_mask(e, mask);
  ad::Var denom_videos = t.log_elem(t.sum_rows(masked));               // per text anchor
  ad::Var denom_texts = t.log_elem(t.sum_rows(t.transpose(masked)));  // per video anchor
  ad::Var posv = t.diag(scaled);
  ad::Var loss_t = t.mean_all(t.sub(denom_videos, posv));
  ad::Var loss_v = t.mean_all(t.sub(denom_texts, posv));
  return t.add(loss_t, loss_v);
}

/// Pairwise pushing loss over one video's query embeddings:
///   l(i,j) = (1 + cos)^gamma * log(1 + e^{alpha (cos + delta)}),
/// averaged over ordered pairs i != j. Zero when fewer than two queries.
inline ad::Var query_diverse_loss(ad::Tape& t, ad::Var queries, const LossConfig& cfg) {
  cfg.validate();
  const int mq = t.val(queries).rows;
  if (mq < 2) return t.leaf(Matrix(1, 1));
  ad::Var qn = t.row_normalize(queries);
  ad::Var cos = t.matmul_nt(qn, qn);
  ad::Var mod = t.pow_elem(t.add_const(cos, 1.0), cfg.qdl_gamma);
  ad::Var push = t.softplus_elem(t.scale(t.add_const(cos, cfg.qdl_delta), cfg.qdl_alpha));
  ad::Var ell = t.hadamard(mod, push);
  Matrix w(mq, mq, 1.0 / (static_cast<double>(mq) * (mq - 1)));
  for (int i = 0; i < mq; ++i) w.at(i, i) = 0.0;
  return t.weighted_sum(ell, std::move(w));
}

/// Optimal matching loss: (1/M_q) sum (1 - cos(q_i, c_j)) over the
/// maximum-profit assignment. The assignment is recomputed from the current
/// values and treated as constant during differentiation.
inline ad::Var optimal_matching_loss(ad::Tape& t, ad::Var queries, ad::Var clips,
                                     AssignmentPlan* plan_out = nullptr) {
  const int mq = t.val(queries).rows;
  const int mc = t.val(clips).rows;
  if (mq > mc) throw std::invalid_argument("optimal_matching_loss: more queries than clips");
  ad::Var qn = t.row_normalize(queries);
  ad::Var cn = t.row_normalize(clips);
  ad::Var pi = t.matmul_nt(qn, cn);
  AssignmentPlan plan = solve_max_assignment(t.val(pi));
  Matrix w = plan.assignment;
  w *= 1.0 / static_cast<double>(mq);
  if (plan_out) *plan_out = plan;
  ad::Var matched = t.weighted_sum(pi, std::move(w));
  return t.add_const(t.scale(matched, -1.0), 1.0);
}

/// One distinct video inside a batch: its embeddings on the tape plus the
/// rows of the query matrix that are relevant to it.
struct BatchVideo {
  ad::Var frames;  // M_f x d, padded rows zero
  ad::Var clips;   // M_c x d
  int valid_frames = 0;
  std::vector<int> query_rows;
};

struct LossBatch {
  ad::Var queries;                 // n x d sentence embeddings
  std::vector<int> video_of_pair;  // size n, index into videos
  std::vector<BatchVideo> videos;  // distinct videos of the batch
  Matrix positive;                 // n x n relevance mask, diagonal set
};

struct LossTerms {
  double trip_frame = 0, trip_clip = 0, nce_frame = 0, nce_clip = 0;
  double div = 0, om = 0, total = 0;
  ad::Var total_var;
};

/// Branch similarity columns: for each pair, the max cosine between every
/// query and that pair's video rows.
inline ad::Var batch_similarity(ad::Tape& t, ad::Var queries_norm, const LossBatch& batch,
                                bool clip_level) {
  std::vector<ad::Var> per_video(batch.videos.size());
  std::vector<char> built(batch.videos.size(), 0);
  std::vector<ad::Var> cols;
  cols.reserve(batch.video_of_pair.size());
  for (int vi : batch.video_of_pair) {
    if (!built[vi]) {
      const BatchVideo& bv = batch.videos[vi];
      ad::Var rows = clip_level ? bv.clips : t.slice_rows(bv.frames, 0, bv.valid_frames);
      ad::Var rn = t.row_normalize(rows);
      per_video[vi] = t.row_max(t.matmul_nt(queries_norm, rn));
      built[vi] = 1;
    }
    cols.push_back(per_video[vi]);
  }
  return t.concat_cols(cols);
}

/// Full training objective:
///   L = trip_c + trip_f + lambda_c nce_c + lambda_f nce_f
///       + lambda_d L_div + lambda_o L_om.
/// Branch toggles drop the corresponding similarity terms; the optimal
/// matching term needs the clip branch.
inline LossTerms total_loss(ad::Tape& t, const LossBatch& batch, const LossConfig& cfg,
                            bool use_frame = true, bool use_clip = true) {
  cfg.validate();
  const int n = static_cast<int>(batch.video_of_pair.size());
  if (n < 2) throw std::invalid_argument("total_loss: batch must hold >= 2 pairs");
  if (!use_frame && !use_clip) throw std::invalid_argument("total_loss: no branch enabled");
  LossTerms terms;
  ad::Var qn = t.row_normalize(batch.queries);

  ad::Var total;
  bool first = true;
  auto add_term = [&](ad::Var v, double weight, double* record) {
    *record = t.val(v).at(0, 0);
    if (weight == 0.0) return;
    ad::Var w = weight == 1.0 ? v : t.scale(v, weight);
    total = first ? w : t.add(total, w);
    first = false;
  };

  if (use_clip) {
    ad::Var sc = batch_similarity(t, qn, batch, true);
    add_term(triplet_loss(t, sc, batch.positive, cfg.margin), 1.0, &terms.trip_clip);
    add_term(infonce_loss(t, sc, batch.positive, cfg.nce_temperature), cfg.lambda_clip_nce,
             &terms.nce_clip);
  }
  if (use_frame) {
    ad::Var sf = batch_similarity(t, qn, batch, false);
    add_term(triplet_loss(t, sf, batch.positive, cfg.margin), 1.0, &terms.trip_frame);
    add_term(infonce_loss(t, sf, batch.positive, cfg.nce_temperature), cfg.lambda_frame_nce,
             &terms.nce_frame);
  }

  // Query diverse loss: per video over its in-batch queries, averaged over
  // videos with at least two of them.
  if (cfg.lambda_div > 0.0) {
    ad::Var acc;
    int count = 0;
    for (const BatchVideo& bv : batch.videos) {
      if (bv.query_rows.size() < 2) continue;
      ad::Var qv = t.select_rows(batch.queries, bv.query_rows);
      ad::Var l = query_diverse_loss(t, qv, cfg);
      acc = count == 0 ? l : t.add(acc, l);
      ++count;
    }
    if (count > 0) add_term(t.scale(acc, 1.0 / count), cfg.lambda_div, &terms.div);
  }

  // Optimal matching loss: per video, first M_c in-batch queries at most.
  if (use_clip && cfg.lambda_om > 0.0) {
    ad::Var acc;
    int count = 0;
    for (const BatchVideo& bv : batch.videos) {
      if (bv.query_rows.empty()) continue;
      const int mc = t.val(bv.clips).rows;
      std::vector<int> rows = bv.query_rows;
      if (static_cast<int>(rows.size()) > mc) rows.resize(mc);
      ad::Var qv = t.select_rows(batch.queries, rows);
      ad::Var l = optimal_matching_loss(t, qv, bv.clips);
      acc = count == 0 ? l : t.add(acc, l);
      ++count;
    }
    if (count > 0) add_term(t.scale(acc, 1.0 / count), cfg.lambda_om, &terms.om);
  }

  if (first) total = t.leaf(Matrix(1, 1));
  terms.total = t.val(total).at(0, 0);
  terms.total_var = total;
  return terms;
}

}  // namespace prvr
