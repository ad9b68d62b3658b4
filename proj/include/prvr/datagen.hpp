#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prvr/encoders.hpp"
#include "prvr/retrieval.hpp"
#include "prvr/serialize.hpp"

namespace prvr {

/// Recipe for a synthetic corpus with planted variable-length moments.
struct CorpusSpec {
  int train_videos = 200;
  int test_videos = 50;
  int frames_min = 16;
  int frames_max = 32;
  int moments_min = 2;
  int moments_max = 5;
  double mv_min = 0.05;  // moment-to-video length ratio range
  double mv_max = 0.9;
  int d_o = 32;
  int query_len_min = 4;
  int query_len_max = 8;
  double query_noise = 0.5;
  double background_noise = 0.5;
  int concept_pool = 48;        // shared prototype count; 0 disables the pool
  double concept_spread = 0.3;  // distance of moment concepts from prototypes
  std::uint64_t seed = 1;

  void validate() const {
    if (train_videos < 1 || test_videos < 1) throw std::invalid_argument("spec: need videos in both splits");
    if (frames_min < 1 || frames_max < frames_min) throw std::invalid_argument("spec: bad frame range");
    if (moments_min < 1 || moments_max < moments_min) throw std::invalid_argument("spec: bad moment range");
    if (!(mv_min > 0.0) || mv_max > 1.0 || mv_max < mv_min) throw std::invalid_argument("spec: M/V range must lie in (0,1]");
    if (d_o < 2) throw std::invalid_argument("spec: d_o too small");
    if (query_len_min < 1 || query_len_max < query_len_min) throw std::invalid_argument("spec: bad query length range");
    if (query_noise < 0 || background_noise < 0) throw std::invalid_argument("spec: negative noise");
    if (concept_pool < 0 || concept_spread < 0) throw std::invalid_argument("spec: bad concept pool");
    if (frames_min < moments_max)
      throw std::invalid_argument("spec: infeasible, up to " + std::to_string(moments_max) +
                                  " moments cannot fit in " + std::to_string(frames_min) + " frames");
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = nlohmann::json{{"train_videos", s.train_videos}, {"test_videos", s.test_videos},
                     {"frames_min", s.frames_min},     {"frames_max", s.frames_max},
                     {"moments_min", s.moments_min},   {"moments_max", s.moments_max},
                     {"mv_min", s.mv_min},             {"mv_max", s.mv_max},
                     {"d_o", s.d_o},                   {"query_len_min", s.query_len_min},
                     {"query_len_max", s.query_len_max}, {"query_noise", s.query_noise},
                     {"background_noise", s.background_noise}, {"concept_pool", s.concept_pool},
                     {"concept_spread", s.concept_spread},       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.train_videos = j.value("train_videos", d.train_videos);
  s.test_videos = j.value("test_videos", d.test_videos);
  s.frames_min = j.value("frames_min", d.frames_min);
  s.frames_max = j.value("frames_max", d.frames_max);
  s.moments_min = j.value("moments_min", d.moments_min);
  s.moments_max = j.value("moments_max", d.moments_max);
  s.mv_min = j.value("mv_min", d.mv_min);
  s.mv_max = j.value("mv_max", d.mv_max);
  s.d_o = j.value("d_o", d.d_o);
  s.query_len_min = j.value("query_len_min", d.query_len_min);
  s.query_len_max = j.value("query_len_max", d.query_len_max);
  s.query_noise = j.value("query_noise", d.query_noise);
  s.background_noise = j.value("background_noise", d.background_noise);
  s.concept_pool = j.value("concept_pool", d.concept_pool);
  s.concept_spread = j.value("concept_spread", d.concept_spread);
  s.seed = j.value("seed", d.seed);
}

/// Synthetic train/test corpus: every query maps to exactly one video and one
/// contiguous frame span drawn around a shared latent concept vector.
struct Corpus {
  int d_o = 0;
  std::vector<FeatureSequence> videos;
  std::vector<std::uint8_t> video_is_test;
  std::vector<FeatureSequence> queries;
  std::vector<int> query_video;                  // index into videos
  std::vector<std::pair<int, int>> query_span;   // [begin, end)
  CorpusSpec spec;

  std::vector<int> video_indices(bool test) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(videos.size()); ++i)
      if (static_cast<bool>(video_is_test[i]) == test) out.push_back(i);
    return out;
  }
  std::vector<int> queries_of_video(int v) const {
    std::vector<int> out;
    for (int q = 0; q < static_cast<int>(queries.size()); ++q)
      if (query_video[q] == v) out.push_back(q);
    return out;
  }
};

namespace detail {

/// Stateless gaussian draw (Box-Muller); avoids distribution-object caching so
/// RNG state alone determines the stream.
inline double gauss(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng);
  while (a == 0.0) a = u(rng);
  const double b = u(rng);
  return std::sqrt(-2.0 * std::log(a)) * std::cos(2.0 * std::numbers::pi * b);
}

inline std::vector<double> unit_vector(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) v[0] = 1.0, n = 1.0;
  for (double& x : v) x /= n;
  return v;
}

inline std::vector<double> random_unit(int d, std::mt19937_64& rng) {
  std::vector<double> v(d);
  for (double& x : v) x = gauss(rng);
  return unit_vector(std::move(v));
}

/// concept + noise * g / sqrt(d), renormalized.
inline std::vector<double> around(const std::vector<double>& center, double noise,
                                  std::mt19937_64& rng) {
  std::vector<double> v = center;
  if (noise > 0.0) {
    const double s = noise / std::sqrt(static_cast<double>(v.size()));
    for (double& x : v) x += s * gauss(rng);
  }
  return unit_vector(std::move(v));
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace detail

inline Corpus generate(const CorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uratio(spec.mv_min, spec.mv_max);

  Corpus corpus;
  corpus.d_o = spec.d_o;
  corpus.spec = spec;
  const int total = spec.train_videos + spec.test_videos;
  char idbuf[16];

  // Moment concepts are drawn near a shared prototype pool so train and test
  // videos live on one semantic manifold; every moment still gets a unique
  // latent vector.
  std::vector<std::vector<double>> prototypes;
  for (int i = 0; i < spec.concept_pool; ++i)
    prototypes.push_back(detail::random_unit(spec.d_o, rng));

  for (int v = 0; v < total; ++v) {
    const int len = detail::uniform_int(rng, spec.frames_min, spec.frames_max);
    const int want = detail::uniform_int(rng, spec.moments_min, spec.moments_max);
    if (len < want) throw std::invalid_argument("generate: infeasible spec, moments cannot fit");

    // Sample moment lengths against the remaining capacity, reserving one
    // frame for each later moment, then place them in order with random gaps.
    std::vector<int> lengths(want);
    int used = 0;
    for (int m = 0; m < want; ++m) {
      const int reserve = want - m - 1;
      const int cap = len - used - reserve;
      const double ratio = uratio(rng);
      int l = static_cast<int>(std::lround(ratio * len));
      l = std::max(1, std::min(l, cap));
      lengths[m] = l;
      used += l;
    }
    int slack = len - used;
    std::vector<std::pair<int, int>> spans(want);
    int cursor = 0;
    for (int m = 0; m < want; ++m) {
      const int gap = slack > 0 ? detail::uniform_int(rng, 0, slack) : 0;
      slack -= gap;
      cursor += gap;
      spans[m] = {cursor, cursor + lengths[m]};
      cursor += lengths[m];
    }

    const std::vector<double> background = detail::random_unit(spec.d_o, rng);
    std::vector<std::vector<double>> concepts(want);
    for (auto& c : concepts) {
      if (prototypes.empty()) {
        c = detail::random_unit(spec.d_o, rng);
      } else {
        const auto& proto = prototypes[rng() % prototypes.size()];
        c = detail::around(proto, spec.concept_spread, rng);
      }
    }

    FeatureSequence video;
    std::snprintf(idbuf, sizeof(idbuf), "v%05d", v);
    video.source_id = idbuf;
    video.valid_length = len;
    video.features = Matrix(len, spec.d_o);
    for (int i = 0; i < len; ++i) {
      int moment = -1;
      for (int m = 0; m < want; ++m)
        if (i >= spans[m].first && i < spans[m].second) moment = m;
      const auto row = detail::around(moment >= 0 ? concepts[moment] : background,
                                      spec.background_noise, rng);
      for (int jc = 0; jc < spec.d_o; ++jc) video.features.at(i, jc) = row[jc];
    }
    const int vid_index = static_cast<int>(corpus.videos.size());
    corpus.videos.push_back(std::move(video));
    corpus.video_is_test.push_back(v >= spec.train_videos ? 1 : 0);

    for (int m = 0; m < want; ++m) {
      FeatureSequence query;
      std::snprintf(idbuf, sizeof(idbuf), "q%05d", static_cast<int>(corpus.queries.size()));
      query.source_id = idbuf;
      query.valid_length = detail::uniform_int(rng, spec.query_len_min, spec.query_len_max);
      query.features = Matrix(query.valid_length, spec.d_o);
      for (int i = 0; i < query.valid_length; ++i) {
        const auto row = detail::around(concepts[m], spec.query_noise, rng);
        for (int jc = 0; jc < spec.d_o; ++jc) query.features.at(i, jc) = row[jc];
      }
      corpus.queries.push_back(std::move(query));
      corpus.query_video.push_back(vid_index);
      corpus.query_span.push_back(spans[m]);
    }
  }
  return corpus;
}

namespace detail {
constexpr char kCorpusMagic[8] = {'P', 'R', 'V', 'R', 'C', 'O', 'R', 'P'};
constexpr std::uint32_t kCorpusVersion = 1;
}  // namespace detail

inline void save_corpus(const Corpus& c, const std::string& path) {
  io::Writer w;
  w.put_bytes(detail::kCorpusMagic, sizeof(detail::kCorpusMagic));
  w.put_u32(detail::kCorpusVersion);
  w.put_u32(static_cast<std::uint32_t>(c.d_o));
  w.put_u32(static_cast<std::uint32_t>(c.videos.size()));
  w.put_u32(static_cast<std::uint32_t>(c.queries.size()));
  for (const auto& v : c.videos) {
    w.put_u32(static_cast<std::uint32_t>(v.valid_length));
    w.put_matrix_f32(v.features);
  }
  for (std::size_t q = 0; q < c.queries.size(); ++q) {
    w.put_u32(static_cast<std::uint32_t>(c.queries[q].valid_length));
    w.put_u32(static_cast<std::uint32_t>(c.query_video[q]));
    w.put_u32(static_cast<std::uint32_t>(c.query_span[q].first));
    w.put_u32(static_cast<std::uint32_t>(c.query_span[q].second));
    w.put_matrix_f32(c.queries[q].features);
  }
  nlohmann::json manifest;
  manifest["spec"] = c.spec;
  auto& vids = manifest["videos"] = nlohmann::json::array();
  for (std::size_t i = 0; i < c.videos.size(); ++i)
    vids.push_back({{"id", c.videos[i].source_id},
                    {"split", c.video_is_test[i] ? "test" : "train"}});
  auto& qs = manifest["queries"] = nlohmann::json::array();
  for (std::size_t q = 0; q < c.queries.size(); ++q)
    qs.push_back({{"id", c.queries[q].source_id},
                  {"video", c.videos[c.query_video[q]].source_id},
                  {"span", {c.query_span[q].first, c.query_span[q].second}}});
  w.put_string(manifest.dump());
  w.write_file(path);
}

inline Corpus load_corpus(const std::string& path) {
  io::Reader r(path);
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kCorpusMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a corpus file: " + path);
  const std::uint32_t version = r.get_u32();
  if (version != detail::kCorpusVersion)
    throw std::runtime_error("unsupported corpus version " + std::to_string(version));
  Corpus c;
  c.d_o = static_cast<int>(r.get_u32());
  const std::uint32_t nv = r.get_u32();
  const std::uint32_t nq = r.get_u32();
  for (std::uint32_t i = 0; i < nv; ++i) {
    FeatureSequence v;
    v.valid_length = static_cast<int>(r.get_u32());
    v.features = r.get_matrix_f32();
    c.videos.push_back(std::move(v));
  }
  for (std::uint32_t q = 0; q < nq; ++q) {
    FeatureSequence f;
    f.valid_length = static_cast<int>(r.get_u32());
    c.query_video.push_back(static_cast<int>(r.get_u32()));
    const int b = static_cast<int>(r.get_u32());
    const int e = static_cast<int>(r.get_u32());
    c.query_span.emplace_back(b, e);
    f.features = r.get_matrix_f32();
    c.queries.push_back(std::move(f));
  }
  const nlohmann::json manifest = nlohmann::json::parse(r.get_string());
  c.spec = manifest.at("spec").get<CorpusSpec>();
  const auto& vids = manifest.at("videos");
  if (vids.size() != c.videos.size()) throw std::runtime_error("corpus manifest out of sync");
  for (std::size_t i = 0; i < c.videos.size(); ++i) {
    c.videos[i].source_id = vids[i].at("id").get<std::string>();
    c.video_is_test.push_back(vids[i].at("split").get<std::string>() == "test" ? 1 : 0);
  }
  const auto& qs = manifest.at("queries");
  if (qs.size() != c.queries.size()) throw std::runtime_error("corpus manifest out of sync");
  for (std::size_t q = 0; q < c.queries.size(); ++q)
    c.queries[q].source_id = qs[q].at("id").get<std::string>();
  return c;
}

/// Raw-feature scoring sanity: rank videos by max cosine between the mean
/// query row and every frame. With zero noise this attains SumR = 400.
inline MetricsReport oracle_metrics(const Corpus& c, bool test_split) {
  const std::vector<int> vids = c.video_indices(test_split);
  if (vids.empty()) throw std::invalid_argument("oracle_metrics: empty split");
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> truth;
  for (std::size_t q = 0; q < c.queries.size(); ++q) {
    const int tv = c.query_video[q];
    if (static_cast<bool>(c.video_is_test[tv]) != test_split) continue;
    const auto& feats = c.queries[q].features;
    std::vector<double> mean(c.d_o, 0.0);
    for (int i = 0; i < c.queries[q].valid_length; ++i)
      for (int j = 0; j < c.d_o; ++j) mean[j] += feats.at(i, j);
    for (double& x : mean) x /= c.queries[q].valid_length;
    std::vector<RankedVideo> scored;
    for (int v : vids) {
      double best = -2.0;
      const auto& vf = c.videos[v].features;
      for (int i = 0; i < c.videos[v].valid_length; ++i)
        best = std::max(best, cosine(mean.data(), vf.row(i), c.d_o));
      scored.push_back({c.videos[v].source_id, best});
    }
    std::sort(scored.begin(), scored.end(), [](const RankedVideo& a, const RankedVideo& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.id < b.id;
    });
    std::vector<std::string> ids;
    for (const auto& s : scored) ids.push_back(s.id);
    rankings.push_back(std::move(ids));
    truth.push_back(c.videos[tv].source_id);
  }
  return compute_metrics(rankings, truth);
}

}  // namespace prvr
