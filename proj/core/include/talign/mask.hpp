#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace talign {

// Binary timeline mask over a T-second grid (one bit per feature).
class SentenceMask {
 public:
  SentenceMask() = default;
  explicit SentenceMask(std::size_t length) : bits_(length, 0) {}
  explicit SentenceMask(std::vector<std::uint8_t> bits);

  // Ones on [floor(start), ceil(end)) clipped to [0, length).
  static SentenceMask from_interval(double start_sec, double end_sec, std::size_t length);
  // Ones on [begin, begin + count).
  static SentenceMask run(std::size_t length, std::size_t begin, std::size_t count);

  std::size_t length() const noexcept { return bits_.size(); }
  bool operator[](std::size_t t) const { return bits_[t] != 0; }
  void set(std::size_t t, bool on = true) { bits_[t] = on ? 1 : 0; }

  std::size_t popcount() const noexcept;
  bool any() const noexcept { return popcount() > 0; }
  bool all() const noexcept { return popcount() == length(); }
  // Single run of ones (false for an all-zero mask).
  bool contiguous() const noexcept;
  // Index of the first one; length() when empty.
  std::size_t first() const noexcept;
  // One past the last one; 0 when empty.
  std::size_t last() const noexcept;

  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  friend bool operator==(const SentenceMask&, const SentenceMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

SentenceMask mask_union(const SentenceMask& a, const SentenceMask& b);
SentenceMask mask_intersection(const SentenceMask& a, const SentenceMask& b);

}  // namespace talign
