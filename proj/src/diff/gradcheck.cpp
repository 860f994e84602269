#include "relformer/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace relformer::diff {

GradCheckResult CheckGradients(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                               double eps) {
  for (auto& x : inputs) x.ZeroGrad();
  Tensor<double> y = f();
  y.Backward();

  GradCheckResult result;
  for (auto& x : inputs) {
    const std::vector<double> analytic =
        x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end()) : std::vector<double>(x.numel(), 0.0);
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f().item();
      values[i] = saved - eps;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (!(rel <= result.max_relative_error)) {
        result = {rel, i, analytic[i], numeric};
      }
    }
  }
  return result;
}

GradCheckResult CheckGradients(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, double eps) {
  Tensor<double> leaf = x.Detach(true);
  return CheckGradients([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace relformer::diff
