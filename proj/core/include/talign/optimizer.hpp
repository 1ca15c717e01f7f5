#pragma once

#include <cstdint>
#include <vector>

#include "talign/autodiff.hpp"

namespace talign {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moments mirror the parameter layout. Step counts are kept
// per parameter so tensors that sit out some steps (the alignability head in
// the first stage) get the correct bias correction.
struct AdamWState {
  ParameterSet m;
  ParameterSet v;
  std::vector<std::uint64_t> steps;

  static AdamWState zeros_like(const ParameterSet& params);
  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

// Decoupled weight decay followed by the bias-corrected Adam update. Only
// parameters present in `grads` are touched.
void adamw_step(ParameterSet& params, const GradientMap& grads, AdamWState& state, const AdamWConfig& cfg);

}  // namespace talign
