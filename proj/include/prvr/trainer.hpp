#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prvr/datagen.hpp"
#include "prvr/losses.hpp"
#include "prvr/model.hpp"

namespace prvr {

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"margin", c.margin},
                     {"qdl_gamma", c.qdl_gamma},
                     {"qdl_alpha", c.qdl_alpha},
                     {"qdl_delta", c.qdl_delta},
                     {"lambda_clip_nce", c.lambda_clip_nce},
                     {"lambda_frame_nce", c.lambda_frame_nce},
                     {"lambda_div", c.lambda_div},
                     {"lambda_om", c.lambda_om},
                     {"nce_temperature", c.nce_temperature}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.margin = j.value("margin", d.margin);
  c.qdl_gamma = j.value("qdl_gamma", d.qdl_gamma);
  c.qdl_alpha = j.value("qdl_alpha", d.qdl_alpha);
  c.qdl_delta = j.value("qdl_delta", d.qdl_delta);
  c.lambda_clip_nce = j.value("lambda_clip_nce", d.lambda_clip_nce);
  c.lambda_frame_nce = j.value("lambda_frame_nce", d.lambda_frame_nce);
  c.lambda_div = j.value("lambda_div", d.lambda_div);
  c.lambda_om = j.value("lambda_om", d.lambda_om);
  c.nce_temperature = j.value("nce_temperature", d.nce_temperature);
}

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  bool grouped_batching = true;  // keep each video's queries adjacent in the epoch order

  void validate() const {
    model.validate();
    loss.validate();
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (val_fraction <= 0.0 || val_fraction >= 0.5)
      throw std::invalid_argument("train: val fraction out of range");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},       {"loss", c.loss},   {"lr", c.lr},
                     {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"seed", c.seed},
                     {"val_fraction", c.val_fraction}, {"grouped_batching", c.grouped_batching}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.grouped_batching = j.value("grouped_batching", d.grouped_batching);
}

/// Canonical serialization (sorted keys) so config hashes are stable.
inline std::string canonical_config(const TrainConfig& c) {
  return nlohmann::json(c).dump();
}

inline std::uint64_t config_hash(const TrainConfig& c) { return io::fnv1a(canonical_config(c)); }

/// Hash without the stopping condition; a checkpoint may be resumed under a
/// larger epoch budget but under no other config change.
inline std::uint64_t resume_compat_hash(const TrainConfig& c) {
  nlohmann::json j(c);
  j.erase("epochs");
  return io::fnv1a(j.dump());
}

/// Standard Adam with bias correction. Aborts on non-finite gradients.
inline void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, std::uint64_t t,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  check_shape(param.same_shape(grad) && param.same_shape(m) && param.same_shape(v),
              "adam_step: shape mismatch");
  if (!grad.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
    v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
    const double mhat = m.data[i] / c1;
    const double vhat = v.data[i] / c2;
    param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Halve on validation plateau (3 stale epochs), floored at 1e-6.
struct LrSchedule {
  double lr = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;

  static constexpr int kPatience = 3;
  static constexpr double kDecay = 0.5;
  static constexpr double kFloor = 1e-6;

  double on_validation(double sum_r) {
    if (sum_r > best) {
      best = sum_r;
      stale = 0;
    } else if (++stale >= kPatience) {
      lr = std::max(lr * kDecay, kFloor);
      stale = 0;
    }
    return lr;
  }
};

struct AdamState {
  std::vector<Matrix> m, v;
  std::uint64_t t = 0;
};

struct Checkpoint {
  ModelParams current;
  ModelParams best;
  AdamState adam;
  int epochs_done = 0;
  LrSchedule schedule;
  double best_sumr = -1.0;
  int best_epoch = -1;
  std::string rng_state;
  std::uint64_t config_hash = 0;
  std::uint64_t compat_hash = 0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_total = 0, mean_trip_f = 0, mean_trip_c = 0, mean_nce_f = 0, mean_nce_c = 0;
  double mean_div = 0, mean_om = 0;
  double val_sumr = 0;
  double lr = 0;
  double seconds = 0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},         {"loss_total", r.mean_total},
                     {"loss_trip_f", r.mean_trip_f}, {"loss_trip_c", r.mean_trip_c},
                     {"loss_nce_f", r.mean_nce_f},   {"loss_nce_c", r.mean_nce_c},
                     {"loss_div", r.mean_div},       {"loss_om", r.mean_om},
                     {"val_sumr", r.val_sumr},       {"lr", r.lr},
                     {"seconds", r.seconds}};
}

namespace detail {
constexpr char kCkptMagic[8] = {'P', 'R', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_named_params(io::Writer& w, ModelParams& p) {
  std::uint32_t count = 0;
  for_each_param(p, [&](const std::string&, Matrix&) { ++count; });
  w.put_u32(count);
  for_each_param(p, [&](const std::string& name, Matrix& m) {
    w.put_string(name);
    w.put_matrix_f64(m);
  });
}

inline void get_named_params(io::Reader& r, ModelParams& p) {
  const std::uint32_t count = r.get_u32();
  std::vector<std::pair<std::string, Matrix>> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    entries.emplace_back(std::move(name), r.get_matrix_f64());
  }
  std::size_t applied = 0;
  for_each_param(p, [&](const std::string& name, Matrix& m) {
    for (auto& [n, mat] : entries) {
      if (n == name) {
        check_shape(m.same_shape(mat), "checkpoint: parameter shape mismatch");
        m = mat;
        ++applied;
        return;
      }
    }
    throw std::runtime_error("checkpoint: missing parameter " + name);
  });
  if (applied != entries.size()) throw std::runtime_error("checkpoint: extra parameters in file");
}

inline void put_matrices(io::Writer& w, const std::vector<Matrix>& ms) {
  w.put_u32(static_cast<std::uint32_t>(ms.size()));
  for (const auto& m : ms) w.put_matrix_f64(m);
}

inline std::vector<Matrix> get_matrices(io::Reader& r) {
  const std::uint32_t n = r.get_u32();
  std::vector<Matrix> ms;
  ms.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) ms.push_back(r.get_matrix_f64());
  return ms;
}
}  // namespace detail

inline void save_checkpoint(Checkpoint& c, const std::string& path) {
  io::Writer w;
  w.put_bytes(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  w.put_u32(detail::kCkptVersion);
  w.put_u64(c.config_hash);
  w.put_u64(c.compat_hash);
  w.put_u32(static_cast<std::uint32_t>(c.epochs_done));
  w.put_f64(c.schedule.lr);
  w.put_f64(c.schedule.best);
  w.put_u32(static_cast<std::uint32_t>(c.schedule.stale));
  w.put_f64(c.best_sumr);
  w.put_u32(static_cast<std::uint32_t>(c.best_epoch + 1));
  w.put_u64(c.adam.t);
  w.put_string(c.rng_state);
  detail::put_named_params(w, c.current);
  detail::put_matrices(w, c.adam.m);
  detail::put_matrices(w, c.adam.v);
  detail::put_named_params(w, c.best);
  w.write_file(path);
}

/// `shape` must be a params object of the producing configuration; it is
/// copied and overwritten by name.
inline Checkpoint load_checkpoint(const std::string& path, const ModelParams& shape) {
  io::Reader r(path);
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t version = r.get_u32();
  if (version != detail::kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.current = shape;
  c.best = shape;
  c.config_hash = r.get_u64();
  c.compat_hash = r.get_u64();
  c.epochs_done = static_cast<int>(r.get_u32());
  c.schedule.lr = r.get_f64();
  c.schedule.best = r.get_f64();
  c.schedule.stale = static_cast<int>(r.get_u32());
  c.best_sumr = r.get_f64();
  c.best_epoch = static_cast<int>(r.get_u32()) - 1;
  c.adam.t = r.get_u64();
  c.rng_state = r.get_string();
  detail::get_named_params(r, c.current);
  c.adam.m = detail::get_matrices(r);
  c.adam.v = detail::get_matrices(r);
  detail::get_named_params(r, c.best);
  return c;
}

/// Encode the given videos and queries and score the retrieval metrics.
inline MetricsReport evaluate(const Model& model, const Corpus& corpus,
                              const std::vector<int>& video_ids,
                              const std::vector<int>& query_ids) {
  std::vector<FeatureSequence> vids;
  vids.reserve(video_ids.size());
  for (int v : video_ids) vids.push_back(corpus.videos[v]);
  const RetrievalIndex index = build_index(model, vids, 0);
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> truth;
  for (int q : query_ids) {
    const TextEmbedding te = encode_text(model, corpus.queries[q]);
    std::vector<double> qv(te.sentence.data.begin(), te.sentence.data.end());
    const auto ranked = rank_videos(qv, index, model.cfg.eff_alpha_f(), model.cfg.eff_alpha_c());
    std::vector<std::string> ids;
    ids.reserve(ranked.size());
    for (const auto& rv : ranked) ids.push_back(rv.id);
    rankings.push_back(std::move(ids));
    truth.push_back(corpus.videos[corpus.query_video[q]].source_id);
  }
  return compute_metrics(rankings, truth);
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
  bool diverged = false;
};

namespace detail {

struct Split {
  std::vector<int> fit_videos;   // trained on
  std::vector<int> val_videos;   // held out from the train split
  std::vector<int> fit_queries;
  std::vector<int> val_queries;
};

inline Split make_split(const Corpus& corpus, double val_fraction) {
  Split s;
  const std::vector<int> train = corpus.video_indices(false);
  if (train.size() < 2) throw std::invalid_argument("train: need at least two train videos");
  std::size_t n_val = static_cast<std::size_t>(std::lround(train.size() * val_fraction));
  n_val = std::max<std::size_t>(1, std::min(n_val, train.size() - 1));
  s.fit_videos.assign(train.begin(), train.end() - n_val);
  s.val_videos.assign(train.end() - n_val, train.end());
  for (int q = 0; q < static_cast<int>(corpus.queries.size()); ++q) {
    const int v = corpus.query_video[q];
    if (std::find(s.fit_videos.begin(), s.fit_videos.end(), v) != s.fit_videos.end())
      s.fit_queries.push_back(q);
    else if (std::find(s.val_videos.begin(), s.val_videos.end(), v) != s.val_videos.end())
      s.val_queries.push_back(q);
  }
  return s;
}

}  // namespace detail

/// Mini-batch training with Adam and the plateau schedule. Queries are
/// shuffled video-grouped so each batch carries several same-video query
/// sets (the diversity and matching losses act on those groups).
/// The checkpoint is rewritten after every epoch when `out_path` is given.
inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus,
                         const std::string& out_path = {},
                         const std::optional<std::string>& resume_path = {},
                         std::ostream* log_stream = nullptr) {
  cfg.validate();
  if (corpus.d_o != cfg.model.d_o)
    throw std::invalid_argument("train: corpus feature width does not match config");
  const std::uint64_t chash = config_hash(cfg);
  const std::uint64_t compat = resume_compat_hash(cfg);

  Model model = make_model(cfg.model, cfg.seed);
  Checkpoint ckpt;
  std::mt19937_64 rng(cfg.seed ^ 0x5eedbeefULL);

  if (resume_path) {
    ckpt = load_checkpoint(*resume_path, model.params);
    if (ckpt.compat_hash != compat)
      throw std::runtime_error("resume: checkpoint was produced by a different config");
    ckpt.config_hash = chash;
    ckpt.compat_hash = compat;
    model.params = ckpt.current;
    std::istringstream in(ckpt.rng_state);
    in >> rng;
  } else {
    ckpt.config_hash = chash;
    ckpt.compat_hash = compat;
    ckpt.current = model.params;
    ckpt.best = model.params;
    ckpt.schedule.lr = cfg.lr;
    for_each_param(ckpt.current, [&](const std::string&, Matrix& m) {
      ckpt.adam.m.emplace_back(m.rows, m.cols);
      ckpt.adam.v.emplace_back(m.rows, m.cols);
    });
  }

  const detail::Split split = detail::make_split(corpus, cfg.val_fraction);
  if (split.fit_queries.size() < 2) throw std::invalid_argument("train: not enough queries");

  // Stable parameter pointers in traversal order (matches lift_model order).
  std::vector<Matrix*> plist;
  for_each_param(model.params, [&](const std::string&, Matrix& m) { plist.push_back(&m); });

  TrainResult result;
  result.diverged = false;

  for (int epoch = ckpt.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    // Epoch order over training queries: either a plain shuffle or a
    // video-grouped shuffle that keeps each video's queries adjacent.
    std::vector<int> order;
    if (cfg.grouped_batching) {
      std::vector<int> vids = split.fit_videos;
      std::shuffle(vids.begin(), vids.end(), rng);
      for (int v : vids) {
        std::vector<int> qs;
        for (int q : split.fit_queries)
          if (corpus.query_video[q] == v) qs.push_back(q);
        std::shuffle(qs.begin(), qs.end(), rng);
        order.insert(order.end(), qs.begin(), qs.end());
      }
    } else {
      order = split.fit_queries;
      std::shuffle(order.begin(), order.end(), rng);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = ckpt.schedule.lr;
    int batches = 0;
    bool bad = false;

    for (std::size_t start = 0; start < order.size() && !bad; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      const std::vector<int> batch(order.begin() + start, order.begin() + end);
      const int n = static_cast<int>(batch.size());

      ad::Tape tape;
      ModelVars mv = lift_model(tape, model.params);

      // Encode distinct videos once.
      std::vector<int> video_of_pair(n, -1);
      std::vector<int> distinct;
      LossBatch lb;
      for (int i = 0; i < n; ++i) {
        const int v = corpus.query_video[batch[i]];
        auto it = std::find(distinct.begin(), distinct.end(), v);
        if (it == distinct.end()) {
          distinct.push_back(v);
          video_of_pair[i] = static_cast<int>(distinct.size()) - 1;
        } else {
          video_of_pair[i] = static_cast<int>(it - distinct.begin());
        }
      }
      for (int v : distinct) {
        VideoEncodeVars vev;
        encode_video(tape, corpus.videos[v], mv.frame, mv.clip, model.mask_ptrs(true),
                     model.mask_ptrs(false), cfg.model.aggregation, cfg.model.m_f, cfg.model.m_c,
                     &vev);
        BatchVideo bv;
        bv.frames = vev.frame;
        bv.clips = vev.clip;
        bv.valid_frames = corpus.videos[v].valid_length;
        lb.videos.push_back(bv);
      }
      std::vector<ad::Var> sentence_rows;
      sentence_rows.reserve(n);
      for (int i = 0; i < n; ++i) {
        ad::Var s;
        encode_text(tape, corpus.queries[batch[i]], mv.text, cfg.model.n_max, nullptr, &s);
        sentence_rows.push_back(s);
      }
      lb.queries = tape.concat_rows(sentence_rows);
      lb.video_of_pair = video_of_pair;
      lb.positive = Matrix(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          lb.positive.at(i, j) =
              corpus.query_video[batch[i]] == distinct[video_of_pair[j]] ? 1.0 : 0.0;
      for (int i = 0; i < n; ++i) lb.videos[video_of_pair[i]].query_rows.push_back(i);

      LossTerms terms;
      try {
        terms = total_loss(tape, lb, cfg.loss, cfg.model.use_frame, cfg.model.use_clip);
        if (!std::isfinite(terms.total)) throw std::runtime_error("non-finite loss");
        tape.backward(terms.total_var);
        ckpt.adam.t += 1;
        std::size_t pi = 0;
        for (auto& [name, var] : mv.ordered) {
          const Matrix& g = tape.grad(var);
          if (!g.all_finite())
            throw std::runtime_error("non-finite gradient in " + name);
          adam_step(*plist[pi], g, ckpt.adam.m[pi], ckpt.adam.v[pi], ckpt.adam.t,
                    ckpt.schedule.lr);
          ++pi;
        }
      } catch (const std::runtime_error&) {
        bad = true;
        break;
      }

      rec.mean_total += terms.total;
      rec.mean_trip_f += terms.trip_frame;
      rec.mean_trip_c += terms.trip_clip;
      rec.mean_nce_f += terms.nce_frame;
      rec.mean_nce_c += terms.nce_clip;
      rec.mean_div += terms.div;
      rec.mean_om += terms.om;
      ++batches;
    }

    if (bad) {
      result.diverged = true;
      break;
    }
    if (batches > 0) {
      rec.mean_total /= batches;
      rec.mean_trip_f /= batches;
      rec.mean_trip_c /= batches;
      rec.mean_nce_f /= batches;
      rec.mean_nce_c /= batches;
      rec.mean_div /= batches;
      rec.mean_om /= batches;
    }

    const MetricsReport val = evaluate(model, corpus, split.val_videos, split.val_queries);
    rec.val_sumr = val.sum_r;
    if (val.sum_r > ckpt.best_sumr) {
      ckpt.best_sumr = val.sum_r;
      ckpt.best_epoch = epoch;
      ckpt.best = model.params;
    }
    ckpt.schedule.on_validation(val.sum_r);
    ckpt.epochs_done = epoch + 1;
    ckpt.current = model.params;
    {
      std::ostringstream os;
      os << rng;
      ckpt.rng_state = os.str();
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (log_stream) (*log_stream) << nlohmann::json(rec).dump() << "\n" << std::flush;
    if (!out_path.empty()) save_checkpoint(ckpt, out_path);
  }

  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace prvr
