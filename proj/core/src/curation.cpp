#include "talign/curation.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "talign/error.hpp"

namespace talign {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (true) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

// Final non-blank line of a cue payload after normalization; empty if none.
std::string final_line(const std::string& raw) {
  const auto lines = split_lines(raw);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::string n = normalize_line(*it);
    if (!n.empty()) return n;
  }
  return {};
}

}  // namespace

bool passes_threshold(double avg_prob, double threshold) { return avg_prob >= threshold - 1e-12; }

LanguageFilterResult language_filter(const SubtitleDoc& doc, const LanguageClassifier& classifier,
                                     std::mt19937_64& rng, std::size_t n_samples, double threshold) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < doc.cues.size(); ++i) {
    if (!normalize_line(doc.cues[i].raw_text).empty()) eligible.push_back(i);
  }
  LanguageFilterResult r;
  const std::size_t n = std::min(n_samples, eligible.size());
  if (n == 0) return r;
  // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, eligible.size() - 1)(rng);
    std::swap(eligible[i], eligible[j]);
    r.sampled.push_back(eligible[i]);
  }
  double sum = 0.0;
  for (std::size_t idx : r.sampled) {
    sum += classifier.probability(normalize_line(doc.cues[idx].raw_text), "en");
  }
  r.avg_english_prob = sum / static_cast<double>(n);
  r.kept = passes_threshold(r.avg_english_prob, threshold);
  return r;
}

std::string normalize_line(std::string_view line) { return join(split_words(strip_vtt_tags(line)), ' '); }

SubtitleDoc dedup_linebreaks(const SubtitleDoc& doc, std::size_t* changed) {
  SubtitleDoc out = doc;
  std::size_t n_changed = 0;
  std::string prev_final;
  for (SubtitleCue& cue : out.cues) {
    auto lines = split_lines(cue.raw_text);
    std::size_t drop = 0;
    while (!prev_final.empty() && drop < lines.size() && normalize_line(lines[drop]) == prev_final) ++drop;
    if (drop > 0) {
      lines.erase(lines.begin(), lines.begin() + static_cast<long>(drop));
      cue.raw_text = join(lines, '\n');
      cue.words = parse_timed_words(cue.raw_text, cue.start_sec);
      ++n_changed;
    }
    std::string fl = final_line(cue.raw_text);
    if (!fl.empty()) prev_final = std::move(fl);
  }
  if (changed) *changed = n_changed;
  return out;
}

std::vector<StreamWord> word_stream(const SubtitleDoc& doc) {
  std::vector<StreamWord> stream;
  for (const SubtitleCue& cue : doc.cues) {
    const std::size_t first = stream.size();
    const auto timed = parse_timed_words(cue.raw_text, cue.start_sec);
    if (!timed.empty()) {
      for (std::size_t i = 0; i < timed.size(); ++i) {
        const double start = std::clamp(timed[i].start_sec, cue.start_sec, cue.end_sec);
        const double end = i + 1 < timed.size() ? std::clamp(timed[i + 1].start_sec, start, cue.end_sec) : cue.end_sec;
        stream.push_back({timed[i].text, start, end, false});
      }
    } else {
      const auto words = split_words(strip_vtt_tags(cue.raw_text));
      std::size_t total = 0;
      for (const auto& w : words) total += w.size();
      const double dur = cue.end_sec - cue.start_sec;
      std::size_t before = 0;
      for (const auto& w : words) {
        const double a = cue.start_sec + dur * static_cast<double>(before) / static_cast<double>(total);
        before += w.size();
        const double b = cue.start_sec + dur * static_cast<double>(before) / static_cast<double>(total);
        stream.push_back({w, a, b, false});
      }
    }
    if (stream.size() > first) stream.back().cue_final = true;
  }
  return stream;
}

std::vector<bool> RulePunctuator::sentence_ends(std::span<const StreamWord> words) const {
  std::vector<bool> ends(words.size(), false);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i].text;
    std::size_t j = w.size();
    // Look through closing quotes and brackets.
    while (j > 0 && (w[j - 1] == '"' || w[j - 1] == '\'' || w[j - 1] == ')')) --j;
    if (j > 0 && (w[j - 1] == '.' || w[j - 1] == '!' || w[j - 1] == '?')) ends[i] = true;
    if (words[i].cue_final && i + 1 < words.size() && !words[i + 1].text.empty() &&
        std::isupper(static_cast<unsigned char>(words[i + 1].text[0]))) {
      ends[i] = true;
    }
  }
  return ends;
}

std::string Vocabulary::normalize(std::string_view word) {
  std::string lower;
  for (char c : word) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  auto is_punct = [](char c) { return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c)); };
  std::size_t a = 0, b = lower.size();
  while (a < b && is_punct(lower[a])) ++a;
  while (b > a && is_punct(lower[b - 1])) --b;
  return a == b ? lower : lower.substr(a, b - a);
}

std::size_t Vocabulary::id(std::string_view word) {
  std::string key = normalize(word);
  const auto it = ids_.find(key);
  if (it != ids_.end()) return it->second;
  const std::size_t next = ids_.size();
  ids_.emplace(std::move(key), next);
  return next;
}

std::vector<SentenceRecord> restitch_sentences(const SubtitleDoc& doc, const Punctuator& punctuator,
                                               Vocabulary& vocab) {
  const auto stream = word_stream(doc);
  std::vector<SentenceRecord> out;
  if (stream.empty()) return out;
  auto ends = punctuator.sentence_ends(stream);
  if (ends.size() != stream.size()) throw ContractError("punctuator returned wrong number of flags");
  ends.back() = true;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (!ends[i]) continue;
    SentenceRecord rec;
    std::vector<std::string> words;
    for (std::size_t w = begin; w <= i; ++w) {
      words.push_back(stream[w].text);
      if (rec.token_ids.size() < kMaxSentenceTokens) rec.token_ids.push_back(vocab.id(stream[w].text));
    }
    rec.text = join(words, ' ');
    rec.start_sec = stream[begin].start_sec;
    rec.end_sec = stream[i].end_sec;
    out.push_back(std::move(rec));
    begin = i + 1;
  }
  return out;
}

CurationResult curate(const SubtitleDoc& doc, const LanguageClassifier& classifier,
                      const Punctuator& punctuator, Vocabulary& vocab, std::mt19937_64& rng) {
  CurationResult r;
  const LanguageFilterResult lang = language_filter(doc, classifier, rng);
  r.report.avg_english_prob = lang.avg_english_prob;
  r.report.kept = lang.kept;
  if (!lang.kept) return r;
  const SubtitleDoc clean = dedup_linebreaks(doc, &r.report.cues_deduped);
  r.sentences = restitch_sentences(clean, punctuator, vocab);
  r.report.sentences_out = r.sentences.size();
  return r;
}

}  // namespace talign
