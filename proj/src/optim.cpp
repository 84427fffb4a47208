#include "odflow/optim.hpp"

#include <cmath>

namespace odflow::ad {

void AdamState::init(const std::vector<ParamEntry>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const ParamEntry& p : params) {
    m.emplace_back(p.tensor.numel(), 0.0);
    v.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adam_step(std::vector<ParamEntry>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) throw contract_error("AdamState not initialized for these parameters");
  for (const ParamEntry& p : params)
    for (double g : p.tensor.grad())
      if (!std::isfinite(g))
        throw validation_error("non-finite gradient on parameter '" + p.name + "'; step aborted");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& val = params[p].tensor.values();
    const auto& grad = params[p].tensor.grad();
    auto& mp = state.m[p];
    auto& vp = state.v[p];
    for (std::size_t i = 0; i < val.size(); ++i) {
      mp[i] = state.beta1 * mp[i] + (1.0 - state.beta1) * grad[i];
      vp[i] = state.beta2 * vp[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      const double mhat = mp[i] / bc1;
      const double vhat = vp[i] / bc2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void zero_grad(std::vector<ParamEntry>& params) {
  for (ParamEntry& p : params) p.tensor.zero_grad();
}

}  // namespace odflow::ad
