#pragma once

#include <random>

#include "relformer/diff/ops.hpp"
#include "relformer/diff/params.hpp"

namespace relformer::model {

using diff::ParameterList;
using diff::Tensor;

// Per-call forward settings.
struct ForwardContext {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train && dropout > 0
};

namespace init {

// U(-bound, bound) with bound = gain / sqrt(fan_in).
template <typename T>
Tensor<T> FanInUniform(const diff::Shape& shape, std::size_t fan_in, double gain, std::mt19937_64& rng);
// N(0, sigma^2) truncated to [-2 sigma, 2 sigma].
template <typename T>
Tensor<T> TruncatedNormal(const diff::Shape& shape, double sigma, std::mt19937_64& rng);

}  // namespace init

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  // x: [..., in] -> [..., out]
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> Parameters() const;
};

template <typename T>
struct Conv {
  Tensor<T> weight;  // [k, k, in, out]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, double gain, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> Parameters() const;
};

template <typename T>
struct Norm {
  Tensor<T> gamma;
  Tensor<T> beta;

  Norm() = default;
  explicit Norm(std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> Parameters() const;
};

}  // namespace relformer::model
