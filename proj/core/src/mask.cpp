#include "talign/mask.hpp"

#include <algorithm>
#include <cmath>

#include "talign/error.hpp"

namespace talign {

SentenceMask::SentenceMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b != 0 ? 1 : 0;
}

SentenceMask SentenceMask::from_interval(double start_sec, double end_sec, std::size_t length) {
  SentenceMask m(length);
  const double lo = std::max(0.0, std::floor(start_sec));
  const double hi = std::min(static_cast<double>(length), std::ceil(end_sec));
  for (auto t = static_cast<std::size_t>(lo); static_cast<double>(t) < hi; ++t) m.bits_[t] = 1;
  return m;
}

SentenceMask SentenceMask::run(std::size_t length, std::size_t begin, std::size_t count) {
  if (begin + count > length) throw ContractError("mask run exceeds length");
  SentenceMask m(length);
  std::fill_n(m.bits_.begin() + static_cast<std::ptrdiff_t>(begin), count, std::uint8_t{1});
  return m;
}

std::size_t SentenceMask::popcount() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool SentenceMask::contiguous() const noexcept {
  const std::size_t n = popcount();
  return n > 0 && last() - first() == n;
}

std::size_t SentenceMask::first() const noexcept {
  return static_cast<std::size_t>(std::find(bits_.begin(), bits_.end(), std::uint8_t{1}) - bits_.begin());
}

std::size_t SentenceMask::last() const noexcept {
  for (std::size_t t = bits_.size(); t > 0; --t) {
    if (bits_[t - 1]) return t;
  }
  return 0;
}

SentenceMask mask_union(const SentenceMask& a, const SentenceMask& b) {
  if (a.length() != b.length()) throw ShapeError("mask_union: length mismatch");
  SentenceMask out(a.length());
  for (std::size_t t = 0; t < a.length(); ++t) out.set(t, a[t] || b[t]);
  return out;
}

SentenceMask mask_intersection(const SentenceMask& a, const SentenceMask& b) {
  if (a.length() != b.length()) throw ShapeError("mask_intersection: length mismatch");
  SentenceMask out(a.length());
  for (std::size_t t = 0; t < a.length(); ++t) out.set(t, a[t] && b[t]);
  return out;
}

}  // namespace talign
