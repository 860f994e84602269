#pragma once

#include <functional>
#include <vector>

#include "relformer/diff/tensor.hpp"

namespace relformer::diff {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every input
// element. Relative error uses max(|a|, |b|, 1e-8) as denominator.
//
// `f` must rebuild its graph from the current values of `inputs` on every
// call; inputs are perturbed in place and restored afterwards.
GradCheckResult CheckGradients(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                               double eps);

// Convenience form for a single input.
GradCheckResult CheckGradients(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, double eps);

}  // namespace relformer::diff
