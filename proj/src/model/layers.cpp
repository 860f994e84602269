#include "relformer/model/layers.hpp"

#include <cmath>

namespace relformer::model {

namespace init {

template <typename T>
Tensor<T> FanInUniform(const diff::Shape& shape, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> v(diff::NumElements(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::FromData(shape, std::move(v), true);
}

template <typename T>
Tensor<T> TruncatedNormal(const diff::Shape& shape, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<T> v(diff::NumElements(shape));
  for (auto& x : v) {
    double z = n(rng);
    while (std::abs(z) > 2.0) z = n(rng);
    x = static_cast<T>(sigma * z);
  }
  return Tensor<T>::FromData(shape, std::move(v), true);
}

}  // namespace init

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(init::FanInUniform<T>({in, out}, in, 1.0, rng)), bias(Tensor<T>::Zeros({out}, true)) {}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return diff::Add(diff::MatMul(x, weight), bias);
}

template <typename T>
ParameterList<T> Linear<T>::Parameters() const {
  ParameterList<T> p;
  p.Add("weight", weight);
  p.Add("bias", bias);
  return p;
}

template <typename T>
Conv<T>::Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, double gain,
              std::mt19937_64& rng)
    : weight(init::FanInUniform<T>({kernel, kernel, in, out}, kernel * kernel * in, gain, rng)),
      bias(Tensor<T>::Zeros({out}, true)),
      stride(stride_),
      pad(kernel / 2) {}

template <typename T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  return diff::Conv2d(x, weight, bias, stride, pad);
}

template <typename T>
ParameterList<T> Conv<T>::Parameters() const {
  ParameterList<T> p;
  p.Add("weight", weight);
  p.Add("bias", bias);
  return p;
}

template <typename T>
Norm<T>::Norm(std::size_t width) : gamma(Tensor<T>::Full({width}, T(1), true)), beta(Tensor<T>::Zeros({width}, true)) {}

template <typename T>
Tensor<T> Norm<T>::operator()(const Tensor<T>& x) const {
  return diff::LayerNorm(x, gamma, beta);
}

template <typename T>
ParameterList<T> Norm<T>::Parameters() const {
  ParameterList<T> p;
  p.Add("gamma", gamma);
  p.Add("beta", beta);
  return p;
}

template Tensor<float> init::FanInUniform<float>(const diff::Shape&, std::size_t, double, std::mt19937_64&);
template Tensor<double> init::FanInUniform<double>(const diff::Shape&, std::size_t, double, std::mt19937_64&);
template Tensor<float> init::TruncatedNormal<float>(const diff::Shape&, double, std::mt19937_64&);
template Tensor<double> init::TruncatedNormal<double>(const diff::Shape&, double, std::mt19937_64&);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct Norm<float>;
template struct Norm<double>;

}  // namespace relformer::model
