#pragma once

// Random instance generators and fakes shared by the unit and acceptance
// tests.

#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "talign/autodiff.hpp"
#include "talign/curation.hpp"
#include "talign/language.hpp"
#include "talign/mask.hpp"
#include "talign/vtt.hpp"

namespace gen {

using talign::Tensor;

// ---- autodiff primitives

using Builder = std::function<talign::Var(talign::Tape&, const std::vector<talign::Var>&)>;

struct Primitive {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  Builder build;
};

inline std::vector<Primitive> primitives() {
  using namespace talign;
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const auto& x) { return ad::matmul(x[0], x[1]); }},
      {"matmul_nt", {{3, 4}, {2, 4}}, [](Tape&, const auto& x) { return ad::matmul_nt(x[0], x[1]); }},
      {"transpose", {{3, 5}}, [](Tape&, const auto& x) { return ad::transpose(x[0]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape&, const auto& x) { return ad::add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape&, const auto& x) { return ad::sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape&, const auto& x) { return ad::mul(x[0], x[1]); }},
      {"add_row", {{3, 4}, {1, 4}}, [](Tape&, const auto& x) { return ad::add_row(x[0], x[1]); }},
      {"mul_row", {{3, 4}, {1, 4}}, [](Tape&, const auto& x) { return ad::mul_row(x[0], x[1]); }},
      {"scale", {{3, 4}}, [](Tape&, const auto& x) { return ad::scale(x[0], -1.7); }},
      {"row_softmax", {{3, 5}}, [](Tape&, const auto& x) { return ad::row_softmax(x[0]); }},
      {"layer_norm", {{3, 6}}, [](Tape&, const auto& x) { return ad::layer_norm(x[0]); }},
      {"gelu", {{3, 4}}, [](Tape&, const auto& x) { return ad::gelu(x[0]); }},
      {"row_normalize", {{3, 4}}, [](Tape&, const auto& x) { return ad::row_normalize(x[0]); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](Tape&, const auto& x) { return ad::concat_rows(x); }},
      {"concat_cols", {{2, 3}, {2, 2}}, [](Tape&, const auto& x) { return ad::concat_cols(x); }},
      {"slice_rows", {{5, 3}}, [](Tape&, const auto& x) { return ad::slice_rows(x[0], 1, 4); }},
      {"slice_cols", {{3, 5}}, [](Tape&, const auto& x) { return ad::slice_cols(x[0], 2, 5); }},
      {"gather_rows",
       {{4, 3}},
       [](Tape&, const auto& x) {
         const std::vector<std::size_t> ids{2, 0, 2, 3};
         return ad::gather_rows(x[0], ids);
       }},
      {"mean_over_rows", {{4, 3}}, [](Tape&, const auto& x) { return ad::mean_over(x[0], Axis::rows); }},
      {"mean_over_cols", {{4, 3}}, [](Tape&, const auto& x) { return ad::mean_over(x[0], Axis::cols); }},
      {"max_over_rows", {{4, 3}}, [](Tape&, const auto& x) { return ad::max_over(x[0], Axis::rows); }},
      {"max_over_cols", {{4, 3}}, [](Tape&, const auto& x) { return ad::max_over(x[0], Axis::cols); }},
      {"sum", {{3, 4}}, [](Tape&, const auto& x) { return ad::sum(x[0]); }},
  };
}

// Scalar root sum(op(x) * W) with a fixed random W, so every output entry
// contributes with a distinct weight. Returns the worst relative error.
inline double check_primitive(const Primitive& p, std::uint64_t seed) {
  using namespace talign;
  std::mt19937_64 rng(seed);
  ParameterSet params;
  for (std::size_t i = 0; i < p.shapes.size(); ++i) {
    params.add("x" + std::to_string(i), oracle::random_tensor(p.shapes[i].first, p.shapes[i].second, rng, -2, 2));
  }
  Tensor weight;
  {
    Tape t(false);
    std::vector<Var> xs;
    for (std::size_t i = 0; i < params.size(); ++i) xs.push_back(t.parameter(params, i));
    const Var out = p.build(t, xs);
    weight = oracle::random_tensor(out.rows(), out.cols(), rng);
  }
  auto f = [&](Tape& t, const ParameterSet& ps) {
    std::vector<Var> xs;
    for (std::size_t i = 0; i < ps.size(); ++i) xs.push_back(t.parameter(ps, i));
    return ad::sum(ad::mul(p.build(t, xs), t.constant(weight)));
  };
  return oracle::gradient_check(params, f);
}

// ---- losses

// Random contiguous masks with at least one one and one zero.
inline std::vector<talign::SentenceMask> random_masks(std::size_t K, std::size_t T, std::mt19937_64& rng) {
  std::vector<talign::SentenceMask> out;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t len = std::uniform_int_distribution<std::size_t>(1, T - 1)(rng);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, T - len)(rng);
    out.push_back(talign::SentenceMask::run(T, b, len));
  }
  return out;
}

inline std::vector<std::size_t> all_rows(std::size_t K) {
  std::vector<std::size_t> r(K);
  for (std::size_t k = 0; k < K; ++k) r[k] = k;
  return r;
}

// ---- subtitles

// P(en) looked up by exact text; unknown text gets `fallback`.
class TableClassifier final : public talign::LanguageClassifier {
 public:
  std::map<std::string, double> table;
  double fallback = 1.0;
  std::map<std::string, double> classify(std::string_view text) const override {
    const auto it = table.find(std::string(text));
    const double p = it == table.end() ? fallback : it->second;
    return {{"en", p}, {"xx", 1.0 - p}};
  }
};

inline talign::SubtitleCue cue(double a, double b, std::string text) {
  talign::SubtitleCue c;
  c.start_sec = a;
  c.end_sec = b;
  c.raw_text = std::move(text);
  c.words = talign::parse_timed_words(c.raw_text, a);
  return c;
}

inline std::size_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

inline std::string random_word(std::mt19937_64& rng) {
  static const char* pool[] = {"add", "the", "Flour", "mix", "well.", "then", "stir", "Pour", "it", "in?",
                               "salt", "crème", "ok!", "so", "next"};
  return pool[rng() % 15];
}

// Millisecond-exact cues, some with inline word timings.
inline talign::SubtitleDoc fuzz_doc(std::mt19937_64& rng, std::size_t cues) {
  using talign::format_vtt_timestamp;
  using talign::parse_vtt_timestamp;
  talign::SubtitleDoc d;
  long ms = static_cast<long>(rng() % 5000);
  for (std::size_t i = 0; i < cues; ++i) {
    const long len = 200 + static_cast<long>(rng() % 4000);
    const double a = *parse_vtt_timestamp(format_vtt_timestamp(ms / 1000.0));
    const double b = *parse_vtt_timestamp(format_vtt_timestamp((ms + len) / 1000.0));
    std::string text;
    const std::size_t lines = 1 + rng() % 3;
    const bool timed = rng() % 3 == 0;
    for (std::size_t l = 0; l < lines; ++l) {
      if (l) text += '\n';
      const std::size_t words = 1 + rng() % 5;
      for (std::size_t w = 0; w < words; ++w) {
        if (w) text += ' ';
        if (timed && (l || w)) {
          const long t = ms + len * static_cast<long>(l * 5 + w) / 20;
          text += "<" + format_vtt_timestamp(t / 1000.0) + "><c>" + random_word(rng) + "</c>";
        } else {
          text += random_word(rng);
        }
      }
    }
    d.cues.push_back(cue(a, b, text));
    ms += len + static_cast<long>(rng() % 1500);
  }
  return d;
}

// Plants rolling duplicates: the previous cue's last line repeated on top.
inline talign::SubtitleDoc with_rolling_duplicates(talign::SubtitleDoc d, std::mt19937_64& rng) {
  for (std::size_t k = 1; k < d.cues.size(); ++k)
    if (rng() % 2) {
      const std::string& prev = d.cues[k - 1].raw_text;
      d.cues[k] = cue(d.cues[k].start_sec, d.cues[k].end_sec, prev.substr(prev.rfind('\n') + 1) + "\n" + d.cues[k].raw_text);
    }
  return d;
}

}  // namespace gen
