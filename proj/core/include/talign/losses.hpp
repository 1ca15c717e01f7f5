#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "talign/autodiff.hpp"
#include "talign/mask.hpp"

namespace talign {

struct LossConfig {
  double temperature = 0.07;
  double softdtw_gamma = 0.1;

  void validate() const;
};

// Temporal-correspondence contrastive loss, summed over the active rows:
//   -sum_k log( sum_{P_k} e^{A/tau} / sum_{all t} e^{A/tau} )
// with P_k the ones of masks[k]. Every active mask needs at least one one and
// one zero.
Var l_tc(Var alignment, std::span<const SentenceMask> masks, std::span<const std::size_t> active,
         double temperature);

// Mean softmax cross-entropy over the labeled rows of a K x 2 logit matrix.
// labels[k] is 0 or 1.
Var l_alignability(Var logits, std::span<const int> labels, std::span<const std::size_t> labeled);

Var l_total(Var l_tc_value, Var l_align_value);

// Soft-DTW over the cost 1 - A with the three-way soft-min
//   softmin(a,b,c) = -gamma log(e^{-a/gamma} + e^{-b/gamma} + e^{-c/gamma}),
// monotone paths from (0,0) to (K-1,T-1). Requires T >= K.
Var soft_dtw_loss(Var alignment, double gamma);

// Value-only soft-DTW on an explicit cost matrix; used by the loss above and
// by tests that compare against enumeration.
double soft_dtw_value(const Tensor& cost, double gamma);

}  // namespace talign
