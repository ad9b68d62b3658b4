#pragma once

#include <cstdint>
#include <vector>

#include "prvr/autodiff.hpp"
#include "prvr/locality.hpp"
#include "prvr/matrix.hpp"

namespace prvr {

constexpr double kLayerNormEps = 1e-5;

/// One pre-norm encoder block: projections, two layer norms, two-layer FFN.
/// No output projection after attention, so the attention width equals d.
struct BlockParams {
  Matrix wq, wk, wv;      // d x d_h
  Matrix ln1_g, ln1_b;    // 1 x d
  Matrix ln2_g, ln2_b;    // 1 x d
  Matrix ffn_w1, ffn_b1;  // d x h
  Matrix ffn_w2, ffn_b2;  // h x d
  int heads = 4;
};

struct BlockVars {
  ad::Var wq, wk, wv, ln1_g, ln1_b, ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  int heads = 4;
};

namespace detail {

/// Key-validity mask for attention scores: column j allowed iff keep[j].
inline Matrix key_mask(int rows, const std::vector<std::uint8_t>& keep) {
  Matrix m(rows, static_cast<int>(keep.size()));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at(i, j) = keep[j] ? 1.0 : 0.0;
  return m;
}

}  // namespace detail

/// Scaled dot-product attention with optional locality rescaling of the
/// logits (elementwise product before softmax) and key-validity masking.
/// Padded output rows are zeroed.
inline ad::Var constrained_attention(ad::Tape& t, ad::Var x, const BlockVars& p,
                                     const Matrix* locality,
                                     const std::vector<std::uint8_t>& keep) {
  const int m = t.val(x).rows;
  const int dh = t.val(p.wq).cols;
  if (locality) check_shape(locality->rows == m && locality->cols == m, "attention: mask size");
  check_shape(p.heads >= 1 && dh % p.heads == 0, "attention: head count must divide d_h");
  check_shape(static_cast<int>(keep.size()) == m, "attention: validity length");
  const int hd = dh / p.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  const Matrix kmask = detail::key_mask(m, keep);

  ad::Var q = t.matmul(x, p.wq);
  ad::Var k = t.matmul(x, p.wk);
  ad::Var v = t.matmul(x, p.wv);

  std::vector<ad::Var> heads;
  heads.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    ad::Var qh = t.slice_cols(q, h * hd, (h + 1) * hd);
    ad::Var kh = t.slice_cols(k, h * hd, (h + 1) * hd);
    ad::Var vh = t.slice_cols(v, h * hd, (h + 1) * hd);
    ad::Var s = t.scale(t.matmul_nt(qh, kh), scl);
    if (locality) s = t.mul_mask(s, *locality);
    ad::Var a = t.softmax_rows(s, &kmask);
    heads.push_back(t.matmul(a, vh));
  }
  ad::Var out = p.heads == 1 ? heads[0] : t.concat_cols(heads);
  return t.zero_rows(out, keep);
}

/// Pre-norm residual encoder block:
///   x' = attn(LN(x)) + x;  out = FFN(LN(x')) + x'
/// with the locality mask applied inside attention when given. Padded rows
/// are zeroed on exit so downstream consumers see exact zeros.
inline ad::Var encoder_block(ad::Tape& t, ad::Var x, const BlockVars& p, const Matrix* locality,
                             const std::vector<std::uint8_t>& keep) {
  ad::Var n1 = t.layer_norm(x, p.ln1_g, p.ln1_b, kLayerNormEps);
  ad::Var attn = constrained_attention(t, n1, p, locality, keep);
  ad::Var x1 = t.add(x, attn);
  ad::Var n2 = t.layer_norm(x1, p.ln2_g, p.ln2_b, kLayerNormEps);
  ad::Var h = t.relu(t.add_rowvec(t.matmul(n2, p.ffn_w1), p.ffn_b1));
  ad::Var f = t.add_rowvec(t.matmul(h, p.ffn_w2), p.ffn_b2);
  ad::Var x2 = t.add(x1, f);
  return t.zero_rows(x2, keep);
}

inline BlockVars lift_block(ad::Tape& t, const BlockParams& p) {
  BlockVars v;
  v.wq = t.leaf(p.wq);
  v.wk = t.leaf(p.wk);
  v.wv = t.leaf(p.wv);
  v.ln1_g = t.leaf(p.ln1_g);
  v.ln1_b = t.leaf(p.ln1_b);
  v.ln2_g = t.leaf(p.ln2_g);
  v.ln2_b = t.leaf(p.ln2_b);
  v.ffn_w1 = t.leaf(p.ffn_w1);
  v.ffn_b1 = t.leaf(p.ffn_b1);
  v.ffn_w2 = t.leaf(p.ffn_w2);
  v.ffn_b2 = t.leaf(p.ffn_b2);
  v.heads = p.heads;
  return v;
}

/// Value-level wrappers over the tape implementation.

inline Matrix gaussian_attention(const Matrix& x, const LocalityMask& mask, const BlockParams& p,
                                 const std::vector<std::uint8_t>& keep) {
  ad::Tape t;
  ad::Var xv = t.leaf(x);
  BlockVars pv = lift_block(t, p);
  return t.val(constrained_attention(t, xv, pv, &mask.values, keep));
}

inline Matrix gaussian_block(const Matrix& x, double sigma, MaskKind kind, const BlockParams& p,
                             const std::vector<std::uint8_t>& keep) {
  const LocalityMask mask = build_locality_mask(x.rows, sigma, kind);
  ad::Tape t;
  ad::Var xv = t.leaf(x);
  BlockVars pv = lift_block(t, p);
  return t.val(encoder_block(t, xv, pv, &mask.values, keep));
}

inline Matrix vanilla_block(const Matrix& x, const BlockParams& p,
                            const std::vector<std::uint8_t>& keep) {
  ad::Tape t;
  ad::Var xv = t.leaf(x);
  BlockVars pv = lift_block(t, p);
  return t.val(encoder_block(t, xv, pv, nullptr, keep));
}

}  // namespace prvr
