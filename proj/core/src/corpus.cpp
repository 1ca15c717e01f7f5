#include "talign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "talign/error.hpp"
#include "talign/io.hpp"

namespace talign {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

struct Interval {
  long begin;
  long end;
};

NarratedVideo generate_video(std::size_t v, const NoiseModelParams& p, const CorpusDims& dims,
                             const SyntheticParams& s, const Tensor& prototypes) {
  std::mt19937_64 rng(splitmix64(p.seed ^ splitmix64(v + 1)));
  const long T = static_cast<long>(dims.T);

  // Visual timeline: contiguous segments, each showing one distinct topic.
  std::vector<Interval> segments;
  for (long t = 0; t < T;) {
    const long len = std::min<long>(static_cast<long>(uniform_index(rng, s.segment_min, s.segment_max)), T - t);
    segments.push_back({t, t + len});
    t += len;
  }
  if (segments.size() > s.n_topics) throw ContractError("more segments than topics");
  std::vector<std::size_t> topic_pool(s.n_topics);
  std::iota(topic_pool.begin(), topic_pool.end(), 0);
  std::shuffle(topic_pool.begin(), topic_pool.end(), rng);
  std::vector<std::size_t> seg_topic(topic_pool.begin(), topic_pool.begin() + static_cast<long>(segments.size()));
  std::vector<std::size_t> absent_topics(topic_pool.begin() + static_cast<long>(segments.size()), topic_pool.end());

  NarratedVideo video;
  video.id = "synth_" + std::to_string(v);
  video.features = Tensor(dims.T, dims.C_raw);
  std::normal_distribution<double> noise(0.0, s.sigma / std::sqrt(static_cast<double>(dims.C_raw)));
  for (std::size_t g = 0; g < segments.size(); ++g) {
    for (long t = segments[g].begin; t < segments[g].end; ++t) {
      for (std::size_t c = 0; c < dims.C_raw; ++c) {
        video.features(static_cast<std::size_t>(t), c) = prototypes(seg_topic[g], c) + noise(rng);
      }
    }
  }

  // Narration: back-to-back utterances with short pauses.
  std::vector<Interval> spoken;
  for (long t = 0;;) {
    const long d = static_cast<long>(uniform_index(rng, s.sentence_min, s.sentence_max));
    if (t + d > T) break;
    spoken.push_back({t, t + d});
    t += d + static_cast<long>(uniform_index(rng, 0, 1));
  }
  if (spoken.empty()) spoken.push_back({0, T});
  const std::size_t K = spoken.size();

  const auto n_align = std::min<std::size_t>(
      K, static_cast<std::size_t>(std::floor(p.frac_alignable * static_cast<double>(K) + uniform01(rng))));
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> alignable(K, false);
  for (std::size_t i = 0; i < n_align; ++i) alignable[order[i]] = true;

  const double well_prob = p.frac_alignable > 0.0 ? p.frac_well_aligned / p.frac_alignable : 0.0;
  const long max_off = static_cast<long>(std::floor(p.max_offset_sec));
  const std::size_t chatter0 = s.n_topics * s.words_per_topic;
  const std::size_t filler0 = chatter0 + s.chatter_words;

  std::vector<SentenceRecord> sentences(K);
  for (std::size_t k = 0; k < K; ++k) {
    SentenceRecord& rec = sentences[k];
    const std::size_t n_words = uniform_index(rng, 2, 3);
    if (alignable[k]) {
      const double mid = 0.5 * static_cast<double>(spoken[k].begin + spoken[k].end);
      std::size_t g = 0;
      while (g + 1 < segments.size() && static_cast<double>(segments[g].end) <= mid) ++g;
      const Interval gt = segments[g];
      Interval asr = gt;
      const bool well = uniform01(rng) < well_prob || max_off == 0;
      if (!well) {
        long off = 0;
        while (off == 0) off = static_cast<long>(uniform_index(rng, 0, 2 * max_off)) - max_off;
        asr = {gt.begin + off, gt.end + off};
        if (asr.begin < 0) asr = {0, gt.end - gt.begin};
        if (asr.end > T) asr = {T - (gt.end - gt.begin), T};
      }
      for (std::size_t i = 0; i < n_words; ++i) {
        rec.token_ids.push_back(seg_topic[g] * s.words_per_topic + uniform_index(rng, 0, s.words_per_topic - 1));
      }
      rec.start_sec = static_cast<double>(asr.begin);
      rec.end_sec = static_cast<double>(asr.end);
      rec.gt = HiddenGt{true, static_cast<double>(gt.begin), static_cast<double>(gt.end)};
    } else {
      const bool chatter = absent_topics.empty() || (s.chatter_words > 0 && uniform01(rng) < s.chatter_frac);
      if (chatter) {
        for (std::size_t i = 0; i < n_words; ++i) rec.token_ids.push_back(chatter0 + uniform_index(rng, 0, s.chatter_words - 1));
      } else {
        const std::size_t topic = absent_topics[uniform_index(rng, 0, absent_topics.size() - 1)];
        for (std::size_t i = 0; i < n_words; ++i) {
          rec.token_ids.push_back(topic * s.words_per_topic + uniform_index(rng, 0, s.words_per_topic - 1));
        }
      }
      rec.start_sec = static_cast<double>(spoken[k].begin);
      rec.end_sec = static_cast<double>(spoken[k].end);
      rec.gt = HiddenGt{false, 0.0, 0.0};
    }
  }
  for (SentenceRecord& rec : sentences) {
    if (s.filler_words > 0) {
      const std::size_t n_fill = uniform_index(rng, 1, 2);
      for (std::size_t i = 0; i < n_fill; ++i) rec.token_ids.push_back(filler0 + uniform_index(rng, 0, s.filler_words - 1));
    }
    std::shuffle(rec.token_ids.begin(), rec.token_ids.end(), rng);
  }

  // Order violations: adjacent alignable sentences trade ASR intervals.
  std::vector<std::size_t> align_idx;
  for (std::size_t k = 0; k < K; ++k) {
    if (alignable[k]) align_idx.push_back(k);
  }
  for (std::size_t i = 0; i + 1 < align_idx.size(); ++i) {
    if (uniform01(rng) < p.order_shuffle_prob) {
      SentenceRecord& a = sentences[align_idx[i]];
      SentenceRecord& b = sentences[align_idx[i + 1]];
      std::swap(a.start_sec, b.start_sec);
      std::swap(a.end_sec, b.end_sec);
    }
  }

  for (SentenceRecord& rec : sentences) {
    std::string text;
    for (std::size_t id : rec.token_ids) {
      if (!text.empty()) text.push_back(' ');
      if (id < chatter0) {
        text += "t" + std::to_string(id / s.words_per_topic) + "_" + std::to_string(id % s.words_per_topic);
      } else if (id < filler0) {
        text += "c" + std::to_string(id - chatter0);
      } else {
        text += "f" + std::to_string(id - filler0);
      }
    }
    rec.text = std::move(text);
  }
  std::stable_sort(sentences.begin(), sentences.end(),
                   [](const SentenceRecord& a, const SentenceRecord& b) { return a.start_sec < b.start_sec; });
  video.sentences = std::move(sentences);
  return video;
}

}  // namespace

void validate_video(const NarratedVideo& video) {
  const double T = static_cast<double>(video.duration());
  if (video.features.rows() == 0 || video.features.cols() == 0) {
    throw ValidationError("video " + video.id + " has no features");
  }
  if (!video.features.all_finite()) throw ValidationError("video " + video.id + " has non-finite features");
  if (video.sentences.empty()) throw ValidationError("video " + video.id + " has no sentences");
  double prev = -1.0;
  for (std::size_t k = 0; k < video.sentences.size(); ++k) {
    const SentenceRecord& s = video.sentences[k];
    const std::string where = "video " + video.id + " sentence " + std::to_string(k);
    if (!(0.0 <= s.start_sec && s.start_sec < s.end_sec && s.end_sec <= T)) {
      throw ValidationError(where + ": need 0 <= start < end <= duration");
    }
    if (s.start_sec < prev) throw ValidationError(where + ": sentences not ordered by start");
    prev = s.start_sec;
    if (s.token_ids.empty() || s.token_ids.size() > kMaxSentenceTokens) {
      throw ValidationError(where + ": token count must be in [1, 32]");
    }
    if (s.gt && s.gt->alignable && !(0.0 <= s.gt->gt_start && s.gt->gt_start < s.gt->gt_end && s.gt->gt_end <= T)) {
      throw ValidationError(where + ": ground-truth interval out of bounds");
    }
  }
}

void NoiseModelParams::validate() const {
  if (!(0.0 <= frac_well_aligned && frac_well_aligned <= frac_alignable && frac_alignable <= 1.0)) {
    throw ContractError("need 0 <= frac_well_aligned <= frac_alignable <= 1");
  }
  if (!(max_offset_sec >= 0.0)) throw ContractError("max_offset_sec must be >= 0");
  if (!(0.0 <= order_shuffle_prob && order_shuffle_prob <= 1.0)) {
    throw ContractError("order_shuffle_prob must be in [0, 1]");
  }
}

void SyntheticParams::validate(const CorpusDims& dims) const {
  if (dims.T == 0 || dims.C_raw == 0) throw ContractError("corpus dims must be positive");
  if (!(sigma >= 0.0)) throw ContractError("sigma must be >= 0");
  if (n_topics == 0 || words_per_topic == 0) throw ContractError("need at least one topic word");
  if (segment_min == 0 || segment_min > segment_max) throw ContractError("bad segment length range");
  if (sentence_min == 0 || sentence_min > sentence_max) throw ContractError("bad sentence length range");
  if (!(0.0 <= chatter_frac && chatter_frac <= 1.0)) throw ContractError("chatter_frac must be in [0, 1]");
  if (n_topics * segment_min < dims.T) throw ContractError("too few topics to cover the timeline");
}

Corpus generate_corpus(std::size_t n_videos, const NoiseModelParams& params, const CorpusDims& dims,
                       const SyntheticParams& synth) {
  params.validate();
  synth.validate(dims);
  // Topic prototypes are shared by every video.
  std::mt19937_64 rng(splitmix64(params.seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor prototypes(synth.n_topics, dims.C_raw);
  for (std::size_t k = 0; k < synth.n_topics; ++k) {
    double norm = 0.0;
    for (std::size_t c = 0; c < dims.C_raw; ++c) {
      prototypes(k, c) = normal(rng);
      norm += prototypes(k, c) * prototypes(k, c);
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dims.C_raw; ++c) prototypes(k, c) /= norm;
  }
  Corpus corpus;
  corpus.reserve(n_videos);
  for (std::size_t v = 0; v < n_videos; ++v) corpus.push_back(generate_video(v, params, dims, synth, prototypes));
  return corpus;
}

std::vector<std::size_t> valid_window_starts(const NarratedVideo& video, std::size_t window) {
  std::vector<std::size_t> starts;
  const std::size_t T = video.duration();
  if (window == 0 || window > T) return starts;
  for (std::size_t st = 0; st + window <= T; ++st) {
    const double a = static_cast<double>(st);
    const double b = static_cast<double>(st + window);
    for (const SentenceRecord& s : video.sentences) {
      if (std::ceil(s.end_sec) > a && std::floor(s.start_sec) < b) {
        starts.push_back(st);
        break;
      }
    }
  }
  return starts;
}

WindowSample window_at(const NarratedVideo& video, std::size_t start, std::size_t window) {
  const std::size_t T = video.duration();
  if (window == 0 || start + window > T) throw ContractError("window exceeds video");
  WindowSample w;
  w.start = start;
  w.features = Tensor(window, video.features.cols());
  for (std::size_t t = 0; t < window; ++t) {
    std::copy_n(video.features.row(start + t).begin(), video.features.cols(), w.features.row(t).begin());
  }
  const double offset = static_cast<double>(start);
  for (std::size_t k = 0; k < video.sentences.size(); ++k) {
    const SentenceRecord& s = video.sentences[k];
    SentenceMask m = SentenceMask::from_interval(s.start_sec - offset, s.end_sec - offset, window);
    if (!m.any()) continue;
    w.sentence_index.push_back(k);
    w.masks.push_back(std::move(m));
  }
  return w;
}

WindowSample window_sample(const NarratedVideo& video, std::size_t window, std::mt19937_64& rng) {
  if (video.sentences.empty()) throw ContractError("empty sample: video " + video.id + " has no sentences");
  if (window == 0 || window > video.duration()) throw ContractError("window longer than video " + video.id);
  const auto starts = valid_window_starts(video, window);
  if (starts.empty()) throw ContractError("empty sample: no window of video " + video.id + " overlaps a sentence");
  return window_at(video, starts[uniform_index(rng, 0, starts.size() - 1)], window);
}

std::string video_to_json(const NarratedVideo& video) {
  json j;
  j["id"] = video.id;
  json feats = json::array();
  for (std::size_t t = 0; t < video.features.rows(); ++t) {
    const auto r = video.features.row(t);
    feats.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["features"] = std::move(feats);
  json sents = json::array();
  for (const SentenceRecord& s : video.sentences) {
    json js;
    js["text"] = s.text;
    js["tokens"] = s.token_ids;
    js["start"] = s.start_sec;
    js["end"] = s.end_sec;
    if (s.gt) {
      json g;
      g["alignable"] = s.gt->alignable;
      if (s.gt->alignable) {
        g["gt_start"] = s.gt->gt_start;
        g["gt_end"] = s.gt->gt_end;
      }
      js["gt"] = std::move(g);
    }
    sents.push_back(std::move(js));
  }
  j["sentences"] = std::move(sents);
  return j.dump();
}

NarratedVideo video_from_json(std::string_view line, std::size_t line_number) {
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("line " + std::to_string(line_number) + ": " + what, line_number);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw fail(std::string("malformed JSON: ") + e.what());
  }
  try {
    NarratedVideo v;
    v.id = j.at("id").get<std::string>();
    const json& feats = j.at("features");
    if (!feats.is_array()) throw fail("features must be an array");
    const std::size_t T = feats.size();
    const std::size_t C = T == 0 ? 0 : feats.at(0).size();
    v.features = Tensor(T, C);
    for (std::size_t t = 0; t < T; ++t) {
      const json& row = feats.at(t);
      if (!row.is_array() || row.size() != C) throw fail("features must be a rectangular matrix");
      for (std::size_t c = 0; c < C; ++c) v.features(t, c) = row.at(c).get<double>();
    }
    for (const json& js : j.at("sentences")) {
      SentenceRecord s;
      s.text = js.at("text").get<std::string>();
      s.token_ids = js.at("tokens").get<std::vector<std::size_t>>();
      s.start_sec = js.at("start").get<double>();
      s.end_sec = js.at("end").get<double>();
      if (js.contains("gt")) {
        const json& g = js.at("gt");
        HiddenGt gt;
        gt.alignable = g.at("alignable").get<bool>();
        if (gt.alignable) {
          gt.gt_start = g.at("gt_start").get<double>();
          gt.gt_end = g.at("gt_end").get<double>();
        }
        s.gt = gt;
      }
      v.sentences.push_back(std::move(s));
    }
    return v;
  } catch (const json::exception& e) {
    throw fail(std::string("bad field: ") + e.what());
  }
}

void save_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const NarratedVideo& v : corpus) out << video_to_json(v) << '\n';
  if (!out) throw IoError("corpus write failed");
}

Corpus load_jsonl(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    NarratedVideo v = video_from_json(line, n);
    try {
      validate_video(v);
    } catch (const ValidationError& e) {
      throw ParseError("line " + std::to_string(n) + ": " + e.what(), n);
    }
    corpus.push_back(std::move(v));
  }
  return corpus;
}

void save_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::ostringstream ss;
  save_jsonl(ss, corpus);
  write_file_atomic(path, ss.str());
}

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return load_jsonl(in);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats st;
  st.videos = corpus.size();
  for (const NarratedVideo& v : corpus) {
    for (const SentenceRecord& s : v.sentences) {
      ++st.sentences;
      if (s.gt && s.gt->alignable) {
        ++st.alignable;
        if (s.start_sec == s.gt->gt_start && s.end_sec == s.gt->gt_end) ++st.well_aligned;
      }
    }
  }
  return st;
}

std::size_t corpus_vocab_size(const Corpus& corpus) {
  std::size_t v = 0;
  for (const NarratedVideo& vid : corpus) {
    for (const SentenceRecord& s : vid.sentences) {
      for (std::size_t id : s.token_ids) v = std::max(v, id + 1);
    }
  }
  return v;
}

}  // namespace talign
