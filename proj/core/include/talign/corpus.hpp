#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "talign/mask.hpp"
#include "talign/tensor.hpp"

namespace talign {

inline constexpr std::size_t kMaxSentenceTokens = 32;

struct HiddenGt {
  bool alignable = false;
  double gt_start = 0.0;  // meaningful only when alignable
  double gt_end = 0.0;

  friend bool operator==(const HiddenGt&, const HiddenGt&) = default;
};

struct SentenceRecord {
  std::string text;
  std::vector<std::size_t> token_ids;
  double start_sec = 0.0;
  double end_sec = 0.0;
  std::optional<HiddenGt> gt;

  friend bool operator==(const SentenceRecord&, const SentenceRecord&) = default;
};

// One feature row per second of video.
struct NarratedVideo {
  std::string id;
  Tensor features;  // T x C_raw
  std::vector<SentenceRecord> sentences;

  std::size_t duration() const noexcept { return features.rows(); }
  friend bool operator==(const NarratedVideo&, const NarratedVideo&) = default;
};

using Corpus = std::vector<NarratedVideo>;

// Throws ValidationError when a video breaks a structural invariant.
void validate_video(const NarratedVideo& video);

struct NoiseModelParams {
  double frac_alignable = 0.30;
  double frac_well_aligned = 0.15;
  double max_offset_sec = 8.0;
  double order_shuffle_prob = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusDims {
  std::size_t T = 192;
  std::size_t C_raw = 64;
};

// Knobs of the latent-topic generator beyond the noise model.
struct SyntheticParams {
  double sigma = 0.5;                 // noise norm per frame
  std::size_t n_topics = 40;
  std::size_t words_per_topic = 3;
  std::size_t chatter_words = 40;     // never grounded in any frame
  std::size_t filler_words = 20;      // added to every sentence
  double chatter_frac = 1.0;          // unalignable sentences drawn from chatter
  std::size_t segment_min = 5;
  std::size_t segment_max = 10;
  std::size_t sentence_min = 2;
  std::size_t sentence_max = 5;

  std::size_t vocab_size() const noexcept {
    return n_topics * words_per_topic + chatter_words + filler_words;
  }
  void validate(const CorpusDims& dims) const;
};

// Deterministic in (n_videos, params, dims, synth); video v depends only on
// its own derived seed.
Corpus generate_corpus(std::size_t n_videos, const NoiseModelParams& params, const CorpusDims& dims,
                       const SyntheticParams& synth = {});

struct WindowSample {
  std::size_t video = 0;
  std::size_t start = 0;  // first frame of the window in the video
  Tensor features;        // window x C_raw
  std::vector<std::size_t> sentence_index;  // into video.sentences
  std::vector<SentenceMask> masks;          // window coordinates
};

// Window start offsets whose window overlaps at least one sentence.
std::vector<std::size_t> valid_window_starts(const NarratedVideo& video, std::size_t window);

// Uniform over valid starts. Sentences without overlap are dropped and masks
// are clipped to the window.
WindowSample window_sample(const NarratedVideo& video, std::size_t window, std::mt19937_64& rng);
WindowSample window_at(const NarratedVideo& video, std::size_t start, std::size_t window);

std::string video_to_json(const NarratedVideo& video);
NarratedVideo video_from_json(std::string_view line, std::size_t line_number);

void save_jsonl(std::ostream& out, const Corpus& corpus);
Corpus load_jsonl(std::istream& in);
void save_jsonl(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_jsonl(const std::filesystem::path& path);

// Fraction of sentences with gt.alignable, and with ASR equal to gt.
struct CorpusStats {
  std::size_t videos = 0;
  std::size_t sentences = 0;
  std::size_t alignable = 0;
  std::size_t well_aligned = 0;
};
CorpusStats corpus_stats(const Corpus& corpus);

// Largest token id + 1.
std::size_t corpus_vocab_size(const Corpus& corpus);

}  // namespace talign
