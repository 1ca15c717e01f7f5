#include "talign/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "talign/error.hpp"

namespace talign {

std::size_t PseudoLabels::sentence_count() const {
  std::size_t n = 0;
  for (const auto& w : windows) n += w.size();
  return n;
}

std::size_t PseudoLabels::positive_count() const {
  std::size_t n = 0;
  for (const auto& w : windows)
    for (const auto& s : w) n += s.y_pseudo == 1 ? 1 : 0;
  return n;
}

SentenceMask infer_timestamps(std::span<const double> row, std::size_t window_len) {
  const std::size_t t = row.size();
  if (window_len == 0) throw ContractError("infer_timestamps: window_len must be >= 1");
  if (window_len > t) {
    throw ContractError("infer_timestamps: window_len " + std::to_string(window_len) + " > T " +
                        std::to_string(t));
  }
  // Window sums are compared directly; the mean has the same arg-max.
  double sum = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(window_len), 0.0);
  double best = sum;
  std::size_t best_start = 0;
  for (std::size_t s = 1; s + window_len <= t; ++s) {
    sum += row[s + window_len - 1] - row[s - 1];
    if (sum > best) {
      best = sum;
      best_start = s;
    }
  }
  return SentenceMask::run(t, best_start, window_len);
}

double iou(const SentenceMask& a, const SentenceMask& b) {
  if (a.length() != b.length()) throw ContractError("iou: mask lengths differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t t = 0; t < a.length(); ++t) {
    inter += (a[t] && b[t]) ? 1 : 0;
    uni += (a[t] || b[t]) ? 1 : 0;
  }
  if (uni == 0) throw ContractError("iou: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

SentenceMask update_timestamps(const SentenceMask& original, const SentenceMask& shifted,
                               const SentenceMask& shifted_dual, double iou_value) {
  if (original.length() != shifted.length() || original.length() != shifted_dual.length()) {
    throw ContractError("update_timestamps: mask lengths differ");
  }
  return iou_value > 0.0 ? mask_union(shifted, shifted_dual) : original;
}

double align_score(const Tensor& alignment, const Tensor& alignment_dual, const SentenceMask& mask,
                   std::size_t k) {
  if (alignment.rows() != alignment_dual.rows() || alignment.cols() != alignment_dual.cols()) {
    throw ShapeError("align_score: matrices differ in shape");
  }
  if (k >= alignment.rows()) throw ContractError("align_score: sentence index out of range");
  if (mask.length() != alignment.cols()) throw ContractError("align_score: mask length != T");
  const std::size_t n = mask.popcount();
  if (n == 0) throw ContractError("align_score: empty mask");
  double s = 0.0;
  for (std::size_t t = 0; t < mask.length(); ++t) {
    if (mask[t]) s += alignment(k, t) + alignment_dual(k, t);
  }
  return s / static_cast<double>(n);
}

AlignabilityFilter filter_alignability(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw ContractError("filter_alignability: empty batch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("filter_alignability: alpha must be in (0, 1]");
  const std::size_t n = scores.size();
  // Guard against alpha*n landing a hair above an integer.
  const auto n_pos = std::min(n, static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  AlignabilityFilter out;
  out.y_pseudo.assign(n, 0);
  for (std::size_t i = 0; i < n_pos; ++i) out.y_pseudo[order[i]] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.y_pseudo[i]) out.active.push_back(i);
  }
  return out;
}

void ema_update(EmaState& state, const ParameterSet& student) {
  if (!state.teacher.same_layout(student)) throw ShapeError("ema_update: teacher/student layout mismatch");
  const double m = state.momentum;
  for (std::size_t i = 0; i < student.size(); ++i) {
    auto dst = state.teacher[i].data();
    const auto src = student[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (1.0 - m) * src[j];
  }
}

PseudoLabels denoise_batch(std::span<const WindowAgreementInput> windows, double alpha) {
  PseudoLabels out;
  std::vector<double> scores;
  for (const WindowAgreementInput& w : windows) {
    if (w.alignment == nullptr || w.alignment_dual == nullptr) {
      throw ContractError("denoise_batch: missing alignment matrix");
    }
    const Tensor& a = *w.alignment;
    const Tensor& ad = *w.alignment_dual;
    if (a.rows() != w.masks.size()) throw ContractError("denoise_batch: mask count != K");
    auto& labels = out.windows.emplace_back();
    labels.reserve(a.rows());
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const SentenceMask& m = w.masks[k];
      if (m.length() != a.cols()) throw ContractError("denoise_batch: mask length != T");
      // ASR spans longer than the window are clamped to the window.
      const std::size_t len = std::clamp<std::size_t>(m.popcount(), 1, a.cols());
      SentencePseudoLabel p;
      p.shifted = infer_timestamps(a.row(k), len);
      p.shifted_dual = infer_timestamps(ad.row(k), len);
      p.iou = iou(p.shifted, p.shifted_dual);
      p.updated = update_timestamps(m, p.shifted, p.shifted_dual, p.iou);
      p.align_score = align_score(a, ad, p.updated, k);
      scores.push_back(p.align_score);
      labels.push_back(std::move(p));
    }
  }
  if (scores.empty()) throw ContractError("denoise_batch: empty batch");
  const AlignabilityFilter f = filter_alignability(scores, alpha);
  std::size_t i = 0;
  for (auto& w : out.windows) {
    for (auto& s : w) {
      s.y_pseudo = f.y_pseudo[i];
      s.active = s.y_pseudo == 1;
      ++i;
    }
  }
  return out;
}

}  // namespace talign
