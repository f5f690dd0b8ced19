#include "metapn/adam.h"

#include <cmath>
#include <string>

#include "metapn/error.h"

namespace metapn {

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Adam: parameter and gradient tensor counts differ");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size()) {
      throw Error(ErrorCode::kShapeMismatch, "Adam: tensor " + std::to_string(t) +
                                                 " does not match its gradient");
    }
  }
  if (state.step_count == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Adam: state built for a different parameter set");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (state.m[t].size() != params[t].size()) {
      throw Error(ErrorCode::kShapeMismatch, "Adam: moment buffer " + std::to_string(t));
    }
  }

  ++state.step_count;
  const double step = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, step);
  const double correction2 = 1.0 - std::pow(state.beta2, step);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[t][i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  auto p = tensors(params);
  auto g = tensors(grads);
  adam_step(state, p, g);
}

void adam_step(AdamState& state, PropagatorParams& params, const PropagatorGrad& grads) {
  auto p = tensors(params);
  auto g = tensors(grads);
  adam_step(state, p, g);
}

std::vector<std::span<double>> tensors(PropagatorParams& params) {
  return {std::span<double>(params.attn), params.weight.data()};
}

std::vector<std::span<const double>> tensors(const PropagatorParams& params) {
  return {std::span<const double>(params.attn), params.weight.data()};
}

}  // namespace metapn
