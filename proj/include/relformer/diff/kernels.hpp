#pragma once

// Dense kernels behind the autodiff ops. Row-major storage throughout.
//
// Two implementations share one contract:
//   relformer::kernels            OpenMP-parallel; used by the tensor ops.
//   relformer::kernels::reference Plain serial loops; kept as the test oracle
//                                 and benchmark baseline.
//
// Gemm runs Eigen's product over fixed 256-row blocks of C, one block per
// task. The partition does not depend on the thread count, so neither do the
// results. Conv2dForward splits over output rows only.

#include <cstddef>
#include <span>

namespace relformer::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // shared dimension
  bool trans_a = false;  // A stored as k x m
  bool trans_b = false;  // B stored as n x k
};

// C = beta * C + op(A) * op(B)
template <typename T>
void Gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, T beta, std::span<T> c);

// NHWC convolution geometry. Weights are laid out [kh, kw, c_in, c_out].
struct ConvShape {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_c = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return kernel * kernel * in_c; }
  std::size_t rows() const { return batch * out_h() * out_w(); }
};

// Unfolds x into a [rows, patch] matrix with zeros for padded taps.
template <typename T>
void Im2Col(const ConvShape& s, std::span<const T> x, std::span<T> col);

// Adds the [rows, patch] gradient back onto dx (which is not cleared).
template <typename T>
void Col2Im(const ConvShape& s, std::span<const T> col, std::span<T> dx);

// y = conv(x, w) + bias. bias may be empty.
template <typename T>
void Conv2dForward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);

namespace reference {

template <typename T>
void Gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, T beta, std::span<T> c);

template <typename T>
void Conv2dForward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);

}  // namespace reference

}  // namespace relformer::kernels
