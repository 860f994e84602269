#pragma once

// Differentiable primitives. Every op validates its shape law and throws
// ShapeError naming the op and the offending shapes.
//
// Layout conventions: images and feature maps are NHWC; convolution weights
// are [kh, kw, c_in, c_out]; linear weights are [in, out].

#include <cstdint>
#include <random>
#include <vector>

#include "relformer/diff/tensor.hpp"

namespace relformer::diff {

// Elementwise with trailing-dimension broadcasting.
template <typename T> Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> Scale(const Tensor<T>& a, T factor);

// a: [..., K] (leading dims flattened), b: [K, N] -> [..., N].
template <typename T> Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b);
// a: [B, M, K]; b: [B, K, N], or [B, N, K] when transpose_b.
template <typename T> Tensor<T> BatchMatMul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// x: [N, H, W, C_in], w: [k, k, C_in, C_out], bias: [C_out] or undefined.
template <typename T>
Tensor<T> Conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

template <typename T> Tensor<T> Relu(const Tensor<T>& x);
// Exact form: x * Phi(x).
template <typename T> Tensor<T> Gelu(const Tensor<T>& x);
template <typename T> Tensor<T> Exp(const Tensor<T>& x);
template <typename T> Tensor<T> Abs(const Tensor<T>& x);

template <typename T> Tensor<T> Softmax(const Tensor<T>& x);
// Normalizes the last axis, then applies gamma * x + beta (both [C]).
template <typename T>
Tensor<T> LayerNorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// Inverted dropout: train mode zeroes with probability p and scales kept
// values by 1 / (1 - p); eval mode returns x unchanged.
template <typename T> Tensor<T> Dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64& rng);

template <typename T> Tensor<T> Sum(const Tensor<T>& x);
template <typename T> Tensor<T> Mean(const Tensor<T>& x);
template <typename T> Tensor<T> SumLastAxis(const Tensor<T>& x);
// sum_k |a[..., k] - b[..., k]| -> shape of a without its last axis.
template <typename T> Tensor<T> L1Distance(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> Concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> Reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> Permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> Slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> BroadcastTo(const Tensor<T>& x, const Shape& shape);

// table: [V, D]; returns [indices.size(), D].
template <typename T> Tensor<T> Embedding(const Tensor<T>& table, const std::vector<std::size_t>& indices);

// NHWC pooling without padding.
template <typename T> Tensor<T> AvgPool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);
template <typename T> Tensor<T> MaxPool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);
// [N, H, W, C] -> [N, C]
template <typename T> Tensor<T> GlobalAvgPool(const Tensor<T>& x);

}  // namespace relformer::diff
