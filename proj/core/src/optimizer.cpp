#include "talign/optimizer.hpp"

#include <cmath>

#include "talign/error.hpp"

namespace talign {

AdamWState AdamWState::zeros_like(const ParameterSet& params) {
  AdamWState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.add(params.name(i), Tensor(params[i].rows(), params[i].cols()));
    s.v.add(params.name(i), Tensor(params[i].rows(), params[i].cols()));
  }
  s.steps.assign(params.size(), 0);
  return s;
}

void adamw_step(ParameterSet& params, const GradientMap& grads, AdamWState& state, const AdamWConfig& cfg) {
  if (!state.m.same_layout(params) || !state.v.same_layout(params) || state.steps.size() != params.size()) {
    throw ShapeError("optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto it = grads.find(params.name(i));
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    Tensor& p = params[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("gradient shape mismatch: " + params.name(i));
    const auto t = static_cast<double>(++state.steps[i]);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    auto pd = p.data();
    auto gd = g.data();
    auto md = state.m[i].data();
    auto vd = state.v[i].data();
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t j = 0; j < pd.size(); ++j) {
      md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * gd[j];
      vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * gd[j] * gd[j];
      const double mhat = md[j] / bc1;
      const double vhat = vd[j] / bc2;
      pd[j] = pd[j] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace talign
