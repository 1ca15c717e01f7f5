#include "talign/vtt.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <string>

#include "talign/error.hpp"

namespace talign {

namespace {

struct Line {
  std::string_view text;
  std::size_t offset;
};

std::vector<Line> split_lines(std::string_view s) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back({line, pos});
    if (nl == s.size()) break;
    pos = nl + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_digits(std::string_view s, long& out) {
  if (s.empty()) return false;
  out = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    out = out * 10 + (c - '0');
  }
  return true;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

}  // namespace

std::optional<double> parse_vtt_timestamp(std::string_view s) {
  s = trim(s);
  const auto dot = s.rfind('.');
  if (dot == std::string_view::npos || s.size() - dot - 1 != 3) return std::nullopt;
  long ms = 0;
  if (!parse_digits(s.substr(dot + 1), ms)) return std::nullopt;
  std::string_view hms = s.substr(0, dot);
  long parts[3] = {0, 0, 0};
  int n = 0;
  while (true) {
    const auto colon = hms.find(':');
    const std::string_view field = hms.substr(0, colon);
    if (n == 3 || !parse_digits(field, parts[n])) return std::nullopt;
    ++n;
    if (colon == std::string_view::npos) break;
    hms.remove_prefix(colon + 1);
  }
  long h = 0, m = 0, sec = 0;
  if (n == 3) {
    h = parts[0];
    m = parts[1];
    sec = parts[2];
  } else if (n == 2) {
    m = parts[0];
    sec = parts[1];
  } else {
    return std::nullopt;
  }
  if (m >= 60 || sec >= 60) return std::nullopt;
  const long total_ms = ((h * 60 + m) * 60 + sec) * 1000 + ms;
  return static_cast<double>(total_ms) / 1000.0;
}

std::string format_vtt_timestamp(double seconds) {
  if (seconds < 0.0) throw ContractError("negative subtitle timestamp");
  const long long total_ms = std::llround(seconds * 1000.0);
  const long long ms = total_ms % 1000;
  const long long s = (total_ms / 1000) % 60;
  const long long m = (total_ms / 60000) % 60;
  const long long h = total_ms / 3600000;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld.%03lld", h, m, s, ms);
  return buf;
}

std::string strip_vtt_tags(std::string_view payload) {
  std::string out;
  out.reserve(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (payload[i] == '<') {
      const auto close = payload.find('>', i);
      if (close != std::string_view::npos) {
        i = close;
        continue;
      }
    }
    out.push_back(payload[i]);
  }
  return out;
}

std::vector<TimedWord> parse_timed_words(std::string_view payload, double cue_start) {
  std::vector<TimedWord> words;
  bool saw_timing = false;
  double current = cue_start;
  std::string pending;
  auto flush = [&] {
    std::size_t i = 0;
    while (i < pending.size()) {
      while (i < pending.size() && std::isspace(static_cast<unsigned char>(pending[i]))) ++i;
      std::size_t j = i;
      while (j < pending.size() && !std::isspace(static_cast<unsigned char>(pending[j]))) ++j;
      if (j > i) words.push_back({pending.substr(i, j - i), current});
      i = j;
    }
    pending.clear();
  };
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (payload[i] == '<') {
      const auto close = payload.find('>', i);
      if (close != std::string_view::npos) {
        if (auto ts = parse_vtt_timestamp(payload.substr(i + 1, close - i - 1))) {
          flush();
          current = *ts;
          saw_timing = true;
        }
        i = close;
        continue;
      }
    }
    pending.push_back(payload[i]);
  }
  flush();
  if (!saw_timing) words.clear();
  return words;
}

SubtitleDoc parse_vtt(std::string_view text, std::string video_id) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  const std::vector<Line> lines = split_lines(text);
  if (lines.empty() || !lines[0].text.starts_with("WEBVTT")) throw ParseError("missing WEBVTT header", 0);
  const std::size_t header_offset = text.data() == nullptr ? 0 : 0;
  (void)header_offset;

  SubtitleDoc doc;
  doc.video_id = std::move(video_id);
  std::size_t i = 1;
  // Header block runs to the first blank line.
  while (i < lines.size() && !is_blank(lines[i].text)) ++i;
  while (i < lines.size()) {
    while (i < lines.size() && is_blank(lines[i].text)) ++i;
    if (i >= lines.size()) break;
    const std::size_t block_begin = i;
    std::size_t block_end = i;
    while (block_end < lines.size() && !is_blank(lines[block_end].text)) ++block_end;
    i = block_end;

    std::string_view first = lines[block_begin].text;
    if (first.starts_with("NOTE") || first.starts_with("STYLE") || first.starts_with("REGION")) continue;

    std::size_t timing = block_begin;
    if (first.find("-->") == std::string_view::npos) {
      timing = block_begin + 1;
      if (timing >= block_end || lines[timing].text.find("-->") == std::string_view::npos) {
        throw ParseError("cue block without timing line", lines[block_begin].offset);
      }
    }
    const Line& tl = lines[timing];
    const auto arrow = tl.text.find("-->");
    auto start = parse_vtt_timestamp(tl.text.substr(0, arrow));
    std::string_view rest = trim(tl.text.substr(arrow + 3));
    const auto space = rest.find_first_of(" \t");
    auto end = parse_vtt_timestamp(rest.substr(0, space));
    if (!start || !end) throw ParseError("malformed timing line", tl.offset);

    SubtitleCue cue;
    cue.start_sec = *start;
    cue.end_sec = *end;
    for (std::size_t l = timing + 1; l < block_end; ++l) {
      if (l > timing + 1) cue.raw_text.push_back('\n');
      cue.raw_text.append(lines[l].text);
    }
    cue.words = parse_timed_words(cue.raw_text, cue.start_sec);
    if (!(cue.start_sec < cue.end_sec)) {
      throw ValidationError("cue at byte " + std::to_string(tl.offset) + " has start >= end");
    }
    if (!doc.cues.empty() && cue.start_sec < doc.cues.back().start_sec) {
      throw ValidationError("cue at byte " + std::to_string(tl.offset) + " is out of order");
    }
    doc.cues.push_back(std::move(cue));
  }
  return doc;
}

std::string serialize_vtt(const SubtitleDoc& doc) {
  std::string out = "WEBVTT\n";
  for (const SubtitleCue& cue : doc.cues) {
    out += '\n';
    out += format_vtt_timestamp(cue.start_sec);
    out += " --> ";
    out += format_vtt_timestamp(cue.end_sec);
    out += '\n';
    if (!cue.raw_text.empty()) {
      out += cue.raw_text;
      out += '\n';
    }
  }
  return out;
}

}  // namespace talign
