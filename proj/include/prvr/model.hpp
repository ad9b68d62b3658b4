#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prvr/encoders.hpp"
#include "prvr/retrieval.hpp"
#include "prvr/serialize.hpp"

namespace prvr {

struct ModelConfig {
  int d = 16;     // embedding width
  int d_o = 32;   // raw feature width
  int m_f = 32;   // max frames
  int m_c = 8;    // clips per video
  int n_max = 8;  // max query words
  int heads = 4;
  std::vector<double> sigmas{0.1, 0.5, 1.0, 3.0, 5.0, 8.0, 10.0,
                             std::numeric_limits<double>::infinity()};
  MaskKind constraint = MaskKind::kGaussian;
  Aggregation aggregation = Aggregation::kTcm;
  double tcm_tau = 0.6;
  double alpha_f = 0.3;
  double alpha_c = 0.7;
  bool use_frame = true;
  bool use_clip = true;

  void validate() const {
    if (d < 1 || d_o < 1 || m_f < 1 || m_c < 1 || n_max < 1) throw std::invalid_argument("config: bad dims");
    if (heads < 1 || d % heads != 0) throw std::invalid_argument("config: heads must divide d");
    if (sigmas.empty()) throw std::invalid_argument("config: sigma list empty");
    for (double s : sigmas)
      if (!(s > 0.0)) throw std::invalid_argument("config: sigma must be > 0");
    if (!(tcm_tau > 0.0)) throw std::invalid_argument("config: tau must be > 0");
    if (alpha_f < 0 || alpha_c < 0 || std::abs(alpha_f + alpha_c - 1.0) > 1e-12)
      throw std::invalid_argument("config: alpha_f + alpha_c must equal 1");
    if (!use_frame && !use_clip) throw std::invalid_argument("config: no branch enabled");
  }

  /// Effective interpolation weights when a branch is disabled.
  double eff_alpha_f() const { return use_frame ? (use_clip ? alpha_f : 1.0) : 0.0; }
  double eff_alpha_c() const { return use_clip ? (use_frame ? alpha_c : 1.0) : 0.0; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json sig = nlohmann::json::array();
  for (double s : c.sigmas) {
    if (std::isinf(s)) sig.push_back("inf");
    else sig.push_back(s);
  }
  j = nlohmann::json{{"d", c.d},
                     {"d_o", c.d_o},
                     {"m_f", c.m_f},
                     {"m_c", c.m_c},
                     {"n_max", c.n_max},
                     {"heads", c.heads},
                     {"sigmas", sig},
                     {"constraint", to_string(c.constraint)},
                     {"aggregation", to_string(c.aggregation)},
                     {"tcm_tau", c.tcm_tau},
                     {"alpha_f", c.alpha_f},
                     {"alpha_c", c.alpha_c},
                     {"use_frame", c.use_frame},
                     {"use_clip", c.use_clip}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d = j.value("d", d.d);
  c.d_o = j.value("d_o", d.d_o);
  c.m_f = j.value("m_f", d.m_f);
  c.m_c = j.value("m_c", d.m_c);
  c.n_max = j.value("n_max", d.n_max);
  c.heads = j.value("heads", d.heads);
  if (j.contains("sigmas")) {
    c.sigmas.clear();
    for (const auto& s : j.at("sigmas")) {
      if (s.is_string()) {
        if (s.get<std::string>() != "inf") throw std::invalid_argument("config: bad sigma");
        c.sigmas.push_back(std::numeric_limits<double>::infinity());
      } else {
        c.sigmas.push_back(s.get<double>());
      }
    }
  }
  if (j.contains("constraint")) c.constraint = mask_kind_from_string(j.at("constraint").get<std::string>());
  if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  c.tcm_tau = j.value("tcm_tau", d.tcm_tau);
  c.alpha_f = j.value("alpha_f", d.alpha_f);
  c.alpha_c = j.value("alpha_c", d.alpha_c);
  c.use_frame = j.value("use_frame", d.use_frame);
  c.use_clip = j.value("use_clip", d.use_clip);
}

struct ModelParams {
  TextParams text;
  BranchParams frame;
  BranchParams clip;
};

namespace detail {

template <class F>
void for_each_block_param(BlockParams& b, const std::string& prefix, F&& f) {
  f(prefix + ".wq", b.wq);
  f(prefix + ".wk", b.wk);
  f(prefix + ".wv", b.wv);
  f(prefix + ".ln1_g", b.ln1_g);
  f(prefix + ".ln1_b", b.ln1_b);
  f(prefix + ".ln2_g", b.ln2_g);
  f(prefix + ".ln2_b", b.ln2_b);
  f(prefix + ".ffn_w1", b.ffn_w1);
  f(prefix + ".ffn_b1", b.ffn_b1);
  f(prefix + ".ffn_w2", b.ffn_w2);
  f(prefix + ".ffn_b2", b.ffn_b2);
}

template <class F>
void for_each_branch_param(BranchParams& b, const std::string& prefix, F&& f) {
  f(prefix + ".fc_w", b.fc_w);
  f(prefix + ".fc_b", b.fc_b);
  for (std::size_t k = 0; k < b.blocks.size(); ++k)
    for_each_block_param(b.blocks[k], prefix + ".block" + std::to_string(k), f);
  f(prefix + ".tcm.phi", b.tcm.phi);
  f(prefix + ".tcm.ca_wq", b.tcm.ca_wq);
  f(prefix + ".tcm.ca_wk", b.tcm.ca_wk);
  f(prefix + ".tcm.ca_wv", b.tcm.ca_wv);
  f(prefix + ".tcm.fc_w", b.tcm.fc_w);
  f(prefix + ".tcm.fc_b", b.tcm.fc_b);
  f(prefix + ".weighted.logits", b.weighted.logits);
  f(prefix + ".dyn.phi", b.dynamic.phi);
  f(prefix + ".dyn.ca_wq", b.dynamic.ca_wq);
  f(prefix + ".dyn.ca_wk", b.dynamic.ca_wk);
  f(prefix + ".dyn.ca_wv", b.dynamic.ca_wv);
  f(prefix + ".dyn.fc_w", b.dynamic.fc_w);
  f(prefix + ".dyn.fc_b", b.dynamic.fc_b);
}

}  // namespace detail

/// Visits every parameter in a fixed order; the order defines serialization,
/// optimizer traversal, and tape lifting.
template <class F>
void for_each_param(ModelParams& p, F&& f) {
  f("text.fc_w", p.text.fc_w);
  f("text.fc_b", p.text.fc_b);
  f("text.pos", p.text.pos);
  detail::for_each_block_param(p.text.block, "text.block", f);
  f("text.sap_b", p.text.sap_b);
  detail::for_each_branch_param(p.frame, "frame", f);
  detail::for_each_branch_param(p.clip, "clip", f);
}

template <class F>
void for_each_param(const ModelParams& p, F&& f) {
  for_each_param(const_cast<ModelParams&>(p),
                 [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
}

namespace detail {

inline double gauss01(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng);
  while (a == 0.0) a = u(rng);
  const double b = u(rng);
  return std::sqrt(-2.0 * std::log(a)) * std::cos(2.0 * std::numbers::pi * b);
}

inline void xavier(Matrix& m, std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / (m.rows + m.cols));
  std::uniform_real_distribution<double> u(-lim, lim);
  for (double& v : m.data) v = u(rng);
}

inline void small_normal(Matrix& m, std::mt19937_64& rng, double scale = 0.02) {
  for (double& v : m.data) v = scale * gauss01(rng);
}

inline BlockParams make_block(int d, int heads) {
  BlockParams b;
  b.wq = Matrix(d, d);
  b.wk = Matrix(d, d);
  b.wv = Matrix(d, d);
  b.ln1_g = Matrix(1, d, 1.0);
  b.ln1_b = Matrix(1, d);
  b.ln2_g = Matrix(1, d, 1.0);
  b.ln2_b = Matrix(1, d);
  b.ffn_w1 = Matrix(d, 2 * d);
  b.ffn_b1 = Matrix(1, 2 * d);
  b.ffn_w2 = Matrix(2 * d, d);
  b.ffn_b2 = Matrix(1, d);
  b.heads = heads;
  return b;
}

inline BranchParams make_branch(const ModelConfig& cfg, int m) {
  BranchParams b;
  b.fc_w = Matrix(cfg.d_o, cfg.d);
  b.fc_b = Matrix(1, cfg.d);
  const int k = static_cast<int>(cfg.sigmas.size());
  for (int i = 0; i < k; ++i) b.blocks.push_back(make_block(cfg.d, cfg.heads));
  b.tcm.phi = Matrix(1, cfg.d);
  b.tcm.ca_wq = Matrix(cfg.d, cfg.d);
  b.tcm.ca_wk = Matrix(cfg.d, cfg.d);
  b.tcm.ca_wv = Matrix(cfg.d, cfg.d);
  b.tcm.fc_w = Matrix(cfg.d, m);
  b.tcm.fc_b = Matrix(1, m);
  b.tcm.tau = cfg.tcm_tau;
  b.weighted.logits = Matrix(1, k);
  b.weighted.tau = cfg.tcm_tau;
  b.dynamic.phi = Matrix(1, cfg.d);
  b.dynamic.ca_wq = Matrix(cfg.d, cfg.d);
  b.dynamic.ca_wk = Matrix(cfg.d, cfg.d);
  b.dynamic.ca_wv = Matrix(cfg.d, cfg.d);
  b.dynamic.fc_w = Matrix(cfg.d, k);
  b.dynamic.fc_b = Matrix(1, k);
  b.dynamic.tau = cfg.tcm_tau;
  return b;
}

}  // namespace detail

/// Xavier-uniform projections, zero biases, unit layer-norm gains, small
/// normal for positional embeddings and learnable queries.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.text.fc_w = Matrix(cfg.d_o, cfg.d);
  p.text.fc_b = Matrix(1, cfg.d);
  p.text.pos = Matrix(cfg.n_max, cfg.d);
  p.text.block = detail::make_block(cfg.d, cfg.heads);
  p.text.sap_b = Matrix(1, cfg.d);
  p.frame = detail::make_branch(cfg, cfg.m_f);
  p.clip = detail::make_branch(cfg, cfg.m_c);

  std::mt19937_64 rng(seed);
  for_each_param(p, [&](const std::string& name, Matrix& m) {
    const bool is_gain = name.ends_with("ln1_g") || name.ends_with("ln2_g");
    const bool is_bias = name.ends_with("_b") || name.ends_with(".fc_b") ||
                         name.ends_with("ffn_b1") || name.ends_with("ffn_b2") ||
                         name.ends_with("logits");
    if (is_gain) return;  // stays at 1
    if (name.ends_with(".pos") || name.ends_with(".phi") || name.ends_with("sap_b")) {
      detail::small_normal(m, rng);
      return;
    }
    if (is_bias) return;  // stays at 0
    detail::xavier(m, rng);
  });
  return p;
}

/// Model bundle: config, parameters, and the precomputed locality masks.
struct Model {
  ModelConfig cfg;
  ModelParams params;
  std::vector<LocalityMask> frame_masks;
  std::vector<LocalityMask> clip_masks;

  void build_masks() {
    frame_masks.clear();
    clip_masks.clear();
    for (double s : cfg.sigmas) {
      frame_masks.push_back(build_locality_mask(cfg.m_f, s, cfg.constraint));
      clip_masks.push_back(build_locality_mask(cfg.m_c, s, cfg.constraint));
    }
  }

  /// Mask pointers for encode_video; infinite sigma short-circuits to no mask.
  std::vector<const Matrix*> mask_ptrs(bool frame) const {
    std::vector<const Matrix*> out;
    const auto& ms = frame ? frame_masks : clip_masks;
    for (std::size_t i = 0; i < ms.size(); ++i)
      out.push_back(std::isinf(cfg.sigmas[i]) ? nullptr : &ms[i].values);
    return out;
  }
};

inline Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m;
  m.cfg = cfg;
  m.params = init_params(cfg, seed);
  m.build_masks();
  return m;
}

struct ModelVars {
  TextVars text;
  BranchVars frame;
  BranchVars clip;
  std::vector<std::pair<std::string, ad::Var>> ordered;
  std::unordered_map<const Matrix*, ad::Var> by_param;
};

/// Registers every parameter as a tape leaf (in for_each_param order) and
/// mirrors the parameter structs with their Vars.
inline ModelVars lift_model(ad::Tape& t, ModelParams& p) {
  ModelVars mv;
  for_each_param(p, [&](const std::string& name, Matrix& m) {
    ad::Var v = t.leaf(m);
    mv.ordered.emplace_back(name, v);
    mv.by_param.emplace(&m, v);
  });
  auto look = [&](const Matrix& m) { return mv.by_param.at(&m); };
  auto lift_block_vars = [&](const BlockParams& b) {
    BlockVars v;
    v.wq = look(b.wq);
    v.wk = look(b.wk);
    v.wv = look(b.wv);
    v.ln1_g = look(b.ln1_g);
    v.ln1_b = look(b.ln1_b);
    v.ln2_g = look(b.ln2_g);
    v.ln2_b = look(b.ln2_b);
    v.ffn_w1 = look(b.ffn_w1);
    v.ffn_b1 = look(b.ffn_b1);
    v.ffn_w2 = look(b.ffn_w2);
    v.ffn_b2 = look(b.ffn_b2);
    v.heads = b.heads;
    return v;
  };
  auto lift_branch_vars = [&](const BranchParams& b) {
    BranchVars v;
    v.fc_w = look(b.fc_w);
    v.fc_b = look(b.fc_b);
    for (const auto& blk : b.blocks) v.blocks.push_back(lift_block_vars(blk));
    v.tcm = TcmVars{look(b.tcm.phi),  look(b.tcm.ca_wq), look(b.tcm.ca_wk),
                    look(b.tcm.ca_wv), look(b.tcm.fc_w),  look(b.tcm.fc_b),
                    b.tcm.tau};
    v.weighted_logits = look(b.weighted.logits);
    v.dynamic = DynamicAggVars{look(b.dynamic.phi),   look(b.dynamic.ca_wq),
                               look(b.dynamic.ca_wk), look(b.dynamic.ca_wv),
                               look(b.dynamic.fc_w),  look(b.dynamic.fc_b),
                               b.dynamic.tau};
    return v;
  };
  mv.text.fc_w = look(p.text.fc_w);
  mv.text.fc_b = look(p.text.fc_b);
  mv.text.pos = look(p.text.pos);
  mv.text.sap_b = look(p.text.sap_b);
  mv.text.block = lift_block_vars(p.text.block);
  mv.frame = lift_branch_vars(p.frame);
  mv.clip = lift_branch_vars(p.clip);
  return mv;
}

/// Forward-only encoders on a scratch tape.
inline TextEmbedding encode_text(const Model& m, const FeatureSequence& query) {
  ad::Tape t;
  TextVars tv = lift_text(t, m.params.text);
  return encode_text(t, query, tv, m.cfg.n_max);
}

inline BranchEmbeddings encode_video(const Model& m, const FeatureSequence& video) {
  ad::Tape t;
  BranchVars fv = lift_branch(t, m.params.frame);
  BranchVars cv = lift_branch(t, m.params.clip);
  return encode_video(t, video, fv, cv, m.mask_ptrs(true), m.mask_ptrs(false),
                      m.cfg.aggregation, m.cfg.m_f, m.cfg.m_c);
}

/// Builds a retrieval index over the given corpus videos.
template <class VideoRange>
RetrievalIndex build_index(const Model& m, const VideoRange& videos, std::uint64_t fingerprint) {
  RetrievalIndex idx;
  idx.d = m.cfg.d;
  idx.m_f = m.cfg.m_f;
  idx.m_c = m.cfg.m_c;
  idx.fingerprint = fingerprint;
  for (const FeatureSequence& v : videos) {
    BranchEmbeddings emb = encode_video(m, v);
    RetrievalIndex::Entry e;
    e.id = v.source_id;
    e.valid_frames = emb.valid_frames;
    e.frame.reserve(emb.frame.size());
    for (double x : emb.frame.data) e.frame.push_back(static_cast<float>(x));
    e.clip.reserve(emb.clip.size());
    for (double x : emb.clip.data) e.clip.push_back(static_cast<float>(x));
    idx.add(std::move(e));
  }
  return idx;
}

}  // namespace prvr
