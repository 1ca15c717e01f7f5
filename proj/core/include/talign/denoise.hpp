#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "talign/autodiff.hpp"
#include "talign/mask.hpp"
#include "talign/tensor.hpp"

namespace talign {

// Per-sentence output of the mutual-agreement pipeline.
struct SentencePseudoLabel {
  SentenceMask shifted;       // inferred from the joint (TAN) matrix
  SentenceMask shifted_dual;  // inferred from the dual-encoder matrix
  SentenceMask updated;       // union when the two agree, else the ASR mask
  double iou = 0.0;
  double align_score = 0.0;
  int y_pseudo = 0;
  bool active = false;  // contributes to the contrastive loss
};

// Labels for a batch, grouped per window in input order.
struct PseudoLabels {
  std::vector<std::vector<SentencePseudoLabel>> windows;

  std::size_t sentence_count() const;
  std::size_t positive_count() const;
};

// Teacher outputs for one sampled window.
struct WindowAgreementInput {
  const Tensor* alignment = nullptr;       // K x T, joint model
  const Tensor* alignment_dual = nullptr;  // K x T, dual encoder
  std::span<const SentenceMask> masks;     // K ASR masks in window coordinates
};

// Window of `window_len` ones starting at the arg-max of the stride-1 moving
// average of `row`. Ties go to the lowest start.
SentenceMask infer_timestamps(std::span<const double> row, std::size_t window_len);

double iou(const SentenceMask& a, const SentenceMask& b);

SentenceMask update_timestamps(const SentenceMask& original, const SentenceMask& shifted,
                               const SentenceMask& shifted_dual, double iou_value);

// Mean of (A + A_d)[k, :] over the ones of `mask`.
double align_score(const Tensor& alignment, const Tensor& alignment_dual, const SentenceMask& mask,
                   std::size_t k);

struct AlignabilityFilter {
  std::vector<int> y_pseudo;
  std::vector<std::size_t> active;  // indices labeled 1, ascending
};

// Marks the ceil(alpha * n) highest scores as positive; ties favor the lower
// index. Scores are pooled over the whole batch by the caller.
AlignabilityFilter filter_alignability(std::span<const double> scores, double alpha);

struct EmaState {
  ParameterSet teacher;
  double momentum = 0.99;
};

// teacher <- momentum * teacher + (1 - momentum) * student, per element.
void ema_update(EmaState& state, const ParameterSet& student);

// infer -> iou -> update -> score -> filter, with batch-level filtering.
PseudoLabels denoise_batch(std::span<const WindowAgreementInput> windows, double alpha);

}  // namespace talign
