#include "relformer/diff/adam.hpp"

#include <cmath>
#include <string>

#include "relformer/errors.hpp"

namespace relformer::diff {

template <typename T>
AdamState<T> MakeAdamState(const ParameterList<T>& params, const AdamConfig& config) {
  AdamState<T> state;
  state.config = config;
  for (const auto& [name, p] : params) {
    state.m.emplace_back(p.numel(), T(0));
    state.v.emplace_back(p.numel(), T(0));
  }
  return state;
}

template <typename T>
void AdamStep(ParameterList<T>& params, AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("AdamStep: optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                     std::to_string(params.size()) + " parameters");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ShapeError("AdamStep: moment buffer size mismatch for parameter '" + params.name(i) + "'");
    }
    auto w = p.mutable_data();
    const bool has_grad = p.has_grad();
    const auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = has_grad ? static_cast<double>(g[j]) : 0.0;
      double wj = static_cast<double>(w[j]);
      wj -= c.lr * c.weight_decay * wj;
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * grad;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * grad * grad;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      wj -= c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      w[j] = static_cast<T>(wj);
    }
  }
}

template AdamState<float> MakeAdamState<float>(const ParameterList<float>&, const AdamConfig&);
template AdamState<double> MakeAdamState<double>(const ParameterList<double>&, const AdamConfig&);
template void AdamStep<float>(ParameterList<float>&, AdamState<float>&);
template void AdamStep<double>(ParameterList<double>&, AdamState<double>&);

}  // namespace relformer::diff
