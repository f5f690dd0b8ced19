#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metapn/mlp.h"
#include "metapn/propagation.h"

namespace metapn {

// Bias-corrected Adam. Moment buffers are allocated lazily on the first step
// to mirror the parameter tensors they are applied to.
struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(double learning_rate = 0.01) : lr(learning_rate) {}
};

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);
void adam_step(AdamState& state, PropagatorParams& params, const PropagatorGrad& grads);

std::vector<std::span<double>> tensors(PropagatorParams& params);
std::vector<std::span<const double>> tensors(const PropagatorParams& params);

}  // namespace metapn
