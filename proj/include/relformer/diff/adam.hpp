#pragma once

#include <cstdint>
#include <vector>

#include "relformer/diff/params.hpp"

namespace relformer::diff {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
  // Decoupled: p <- p - lr * weight_decay * p before the moment update.
  double weight_decay = 1e-4;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Allocates zero moments matching the parameter shapes.
template <typename T>
AdamState<T> MakeAdamState(const ParameterList<T>& params, const AdamConfig& config);

// One bias-corrected Adam update using the parameters' current grads.
// Parameters without a grad buffer are treated as having zero gradient.
// Throws ShapeError when the state does not match the parameter list.
template <typename T>
void AdamStep(ParameterList<T>& params, AdamState<T>& state);

}  // namespace relformer::diff
