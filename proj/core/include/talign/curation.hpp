#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "talign/corpus.hpp"
#include "talign/language.hpp"
#include "talign/vtt.hpp"

namespace talign {

struct CurationReport {
  bool kept = false;
  double avg_english_prob = 0.0;
  std::size_t cues_deduped = 0;
  std::size_t sentences_out = 0;
};

struct LanguageFilterResult {
  bool kept = false;
  double avg_english_prob = 0.0;
  std::vector<std::size_t> sampled;  // cue indices, in draw order
};

inline constexpr double kEnglishThreshold = 0.9;

// Averages P(en) over min(n_samples, #cues with text) cues drawn without
// replacement; kept iff the mean reaches `threshold`.
LanguageFilterResult language_filter(const SubtitleDoc& doc, const LanguageClassifier& classifier,
                                     std::mt19937_64& rng, std::size_t n_samples = 5,
                                     double threshold = kEnglishThreshold);

// Threshold test shared by the filter and report checks.
bool passes_threshold(double avg_prob, double threshold = kEnglishThreshold);

// Collapses whitespace runs to one space and trims; tags are removed first.
std::string normalize_line(std::string_view line);

// Drops leading lines of each cue that repeat the final line of the previous
// cue with text. Returns the number of cues changed via `changed` when given.
SubtitleDoc dedup_linebreaks(const SubtitleDoc& doc, std::size_t* changed = nullptr);

struct StreamWord {
  std::string text;
  double start_sec = 0.0;
  double end_sec = 0.0;
  bool cue_final = false;  // last word of its cue
};

// Word stream of a doc. Words keep inline timing when present and are
// otherwise spread over their cue in proportion to character counts.
std::vector<StreamWord> word_stream(const SubtitleDoc& doc);

// Decides after which words a sentence ends.
class Punctuator {
 public:
  virtual ~Punctuator() = default;
  // One flag per word; the last word always closes a sentence regardless.
  virtual std::vector<bool> sentence_ends(std::span<const StreamWord> words) const = 0;
};

// Splits after terminal `.`, `!`, `?` and after a cue-final word followed by a
// capitalized word.
class RulePunctuator final : public Punctuator {
 public:
  std::vector<bool> sentence_ends(std::span<const StreamWord> words) const override;
};

// Lower-cased words with surrounding punctuation removed map to ids in
// first-seen order.
class Vocabulary {
 public:
  static std::string normalize(std::string_view word);
  std::size_t id(std::string_view word);
  std::size_t size() const noexcept { return ids_.size(); }
  const std::map<std::string, std::size_t, std::less<>>& entries() const noexcept { return ids_; }

 private:
  std::map<std::string, std::size_t, std::less<>> ids_;
};

std::vector<SentenceRecord> restitch_sentences(const SubtitleDoc& doc, const Punctuator& punctuator,
                                               Vocabulary& vocab);

struct CurationResult {
  CurationReport report;
  std::vector<SentenceRecord> sentences;
};

CurationResult curate(const SubtitleDoc& doc, const LanguageClassifier& classifier,
                      const Punctuator& punctuator, Vocabulary& vocab, std::mt19937_64& rng);

}  // namespace talign
