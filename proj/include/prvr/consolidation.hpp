#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "prvr/attention.hpp"
#include "prvr/autodiff.hpp"

namespace prvr {

enum class Aggregation { kTcm, kAverage, kWeighted, kDynamic };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kTcm: return "tcm";
    case Aggregation::kAverage: return "avg";
    case Aggregation::kWeighted: return "weighted";
    case Aggregation::kDynamic: return "dynamic";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "tcm") return Aggregation::kTcm;
  if (s == "avg") return Aggregation::kAverage;
  if (s == "weighted") return Aggregation::kWeighted;
  if (s == "dynamic") return Aggregation::kDynamic;
  throw std::invalid_argument("unknown aggregation: " + s);
}

/// Aggregation weight generator: a learnable query phi attends over each
/// block output (single-head cross attention), then an FC layer maps the
/// attended vector to one weight per time point.
struct TcmParams {
  Matrix phi;                 // 1 x d
  Matrix ca_wq, ca_wk, ca_wv; // d x d
  Matrix fc_w;                // d x M
  Matrix fc_b;                // 1 x M
  double tau = 0.6;
};

struct TcmVars {
  ad::Var phi, ca_wq, ca_wk, ca_wv, fc_w, fc_b;
  double tau = 0.6;
};

inline TcmVars lift_tcm(ad::Tape& t, const TcmParams& p) {
  return TcmVars{t.leaf(p.phi), t.leaf(p.ca_wq), t.leaf(p.ca_wk), t.leaf(p.ca_wv),
                 t.leaf(p.fc_w), t.leaf(p.fc_b), p.tau};
}

/// Per-block softmax logits shared across all time points.
struct WeightedAggParams {
  Matrix logits;  // 1 x K
  double tau = 0.6;
};

/// Per-video weights: phi cross-attends over the block input.
struct DynamicAggParams {
  Matrix phi;
  Matrix ca_wq, ca_wk, ca_wv;
  Matrix fc_w;  // d x K
  Matrix fc_b;  // 1 x K
  double tau = 0.6;
};

struct DynamicAggVars {
  ad::Var phi, ca_wq, ca_wk, ca_wv, fc_w, fc_b;
  double tau = 0.6;
};

inline DynamicAggVars lift_dynamic(ad::Tape& t, const DynamicAggParams& p) {
  return DynamicAggVars{t.leaf(p.phi), t.leaf(p.ca_wq), t.leaf(p.ca_wk), t.leaf(p.ca_wv),
                        t.leaf(p.fc_w), t.leaf(p.fc_b), p.tau};
}

namespace detail {

/// Single-head cross attention with a single query row. Returns 1 x d.
inline ad::Var single_query_cross_attention(ad::Tape& t, ad::Var phi, ad::Var wq, ad::Var wk,
                                            ad::Var wv, ad::Var x,
                                            const std::vector<std::uint8_t>& keep) {
  const int d = t.val(x).cols;
  ad::Var q = t.matmul(phi, wq);
  ad::Var k = t.matmul(x, wk);
  ad::Var v = t.matmul(x, wv);
  ad::Var s = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  const Matrix kmask = key_mask(1, keep);
  ad::Var a = t.softmax_rows(s, &kmask);
  return t.matmul(a, v);
}

}  // namespace detail

/// Raw (pre-softmax) aggregation weights, one K x M matrix: row k holds
/// FC(CA(phi, X_k, X_k)) for the k-th block output.
inline ad::Var tcm_weights(ad::Tape& t, const TcmVars& p, const std::vector<ad::Var>& stack,
                           const std::vector<std::uint8_t>& keep) {
  if (stack.empty()) throw std::invalid_argument("tcm_weights: empty stack");
  std::vector<ad::Var> rows;
  rows.reserve(stack.size());
  for (ad::Var xk : stack) {
    check_shape(static_cast<int>(keep.size()) == t.val(xk).rows, "tcm_weights: validity length");
    ad::Var ca = detail::single_query_cross_attention(t, p.phi, p.ca_wq, p.ca_wk, p.ca_wv, xk, keep);
    rows.push_back(t.add_rowvec(t.matmul(ca, p.fc_w), p.fc_b));
  }
  return rows.size() == 1 ? rows[0] : t.concat_rows(rows);
}

/// Softmax over blocks per time point, then the per-point convex combination
/// of the block outputs.
inline ad::Var tcm_aggregate(ad::Tape& t, const std::vector<ad::Var>& stack, ad::Var raw_weights,
                             double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tcm_aggregate: tau must be > 0");
  if (stack.empty()) throw std::invalid_argument("tcm_aggregate: empty stack");
  const int k = static_cast<int>(stack.size());
  check_shape(t.val(raw_weights).rows == k && t.val(raw_weights).cols == t.val(stack[0]).rows,
              "tcm_aggregate: weights must be K x M");
  ad::Var points = t.transpose(t.scale(raw_weights, 1.0 / tau));  // M x K
  ad::Var mix = t.softmax_rows(points);                           // M x K, rows sum to 1
  ad::Var out;
  for (int i = 0; i < k; ++i) {
    ad::Var term = t.scale_rows(stack[i], t.slice_cols(mix, i, i + 1));
    out = i == 0 ? term : t.add(out, term);
  }
  return out;
}

inline ad::Var aggregate_avg(ad::Tape& t, const std::vector<ad::Var>& stack) {
  if (stack.empty()) throw std::invalid_argument("aggregate_avg: empty stack");
  ad::Var sum = stack[0];
  for (std::size_t i = 1; i < stack.size(); ++i) sum = t.add(sum, stack[i]);
  return t.scale(sum, 1.0 / static_cast<double>(stack.size()));
}

/// Multiply x by a 1 x 1 scalar variable.
inline ad::Var scale_by(ad::Tape& t, ad::Var x, ad::Var s) {
  const Matrix& xv = t.val(x);
  ad::Var col = s;
  if (xv.rows > 1) {
    std::vector<ad::Var> reps(static_cast<std::size_t>(xv.rows), s);
    col = t.concat_rows(reps);
  }
  return t.scale_rows(x, col);
}

inline ad::Var aggregate_weighted(ad::Tape& t, const std::vector<ad::Var>& stack, ad::Var logits,
                                  double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("aggregate_weighted: tau must be > 0");
  if (stack.empty()) throw std::invalid_argument("aggregate_weighted: empty stack");
  const int k = static_cast<int>(stack.size());
  check_shape(t.val(logits).rows == 1 && t.val(logits).cols == k, "aggregate_weighted: K logits");
  ad::Var mix = t.softmax_rows(t.scale(logits, 1.0 / tau));  // 1 x K
  ad::Var out;
  for (int i = 0; i < k; ++i) {
    ad::Var term = scale_by(t, stack[i], t.slice_cols(mix, i, i + 1));
    out = i == 0 ? term : t.add(out, term);
  }
  return out;
}

/// Per-video weights from the block input; uniform over time points.
inline ad::Var aggregate_dynamic(ad::Tape& t, const std::vector<ad::Var>& stack, ad::Var block_input,
                                 const DynamicAggVars& p, const std::vector<std::uint8_t>& keep) {
  if (stack.empty()) throw std::invalid_argument("aggregate_dynamic: empty stack");
  const int k = static_cast<int>(stack.size());
  check_shape(t.val(p.fc_w).cols == k, "aggregate_dynamic: fc must map to K");
  ad::Var ca =
      detail::single_query_cross_attention(t, p.phi, p.ca_wq, p.ca_wk, p.ca_wv, block_input, keep);
  ad::Var logits = t.add_rowvec(t.matmul(ca, p.fc_w), p.fc_b);  // 1 x K
  return aggregate_weighted(t, stack, logits, p.tau);
}

}  // namespace prvr
