#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace talign {

// A word with its start time from an inline `<HH:MM:SS.mmm>` tag. The first
// word of a timed cue has no tag and starts with the cue.
struct TimedWord {
  std::string text;
  double start_sec = 0.0;

  friend bool operator==(const TimedWord&, const TimedWord&) = default;
};

struct SubtitleCue {
  double start_sec = 0.0;
  double end_sec = 0.0;
  std::string raw_text;           // payload lines joined by '\n', verbatim
  std::vector<TimedWord> words;   // empty when the payload carries no timing tags

  friend bool operator==(const SubtitleCue&, const SubtitleCue&) = default;
};

struct SubtitleDoc {
  std::string video_id;
  std::vector<SubtitleCue> cues;

  friend bool operator==(const SubtitleDoc&, const SubtitleDoc&) = default;
};

// WebVTT subset: `WEBVTT` header, blank-line separated cue blocks with an
// optional identifier line, `[HH:]MM:SS.mmm --> [HH:]MM:SS.mmm` timing lines
// (trailing cue settings ignored) and verbatim multi-line payloads.
// Throws ParseError (byte offset) on a malformed timing line and
// ValidationError on out-of-order cues or start >= end.
SubtitleDoc parse_vtt(std::string_view text, std::string video_id = {});
std::string serialize_vtt(const SubtitleDoc& doc);

// "HH:MM:SS.mmm" or "MM:SS.mmm" to seconds; nullopt when malformed.
std::optional<double> parse_vtt_timestamp(std::string_view s);
std::string format_vtt_timestamp(double seconds);

// Payload with markup tags (`<c>`, `</c>`, `<00:00:01.000>`) removed.
std::string strip_vtt_tags(std::string_view payload);

// Words with timing tags parsed; empty when `payload` has no timing tag.
std::vector<TimedWord> parse_timed_words(std::string_view payload, double cue_start);

}  // namespace talign
