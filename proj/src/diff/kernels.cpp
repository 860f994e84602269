#include "relformer/diff/kernels.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace relformer::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;
constexpr std::size_t kRowBlock = 256;

}  // namespace

template <typename T>
void Gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, T beta, std::span<T> c) {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Matrix>;
  const std::size_t m = s.m, n = s.n, k = s.k;
  if (m == 0 || n == 0) return;
  const auto em = static_cast<Eigen::Index>(m), en = static_cast<Eigen::Index>(n), ek = static_cast<Eigen::Index>(k);
  const ConstMap A(a.data(), s.trans_a ? ek : em, s.trans_a ? em : ek);
  const ConstMap B(b.data(), s.trans_b ? en : ek, s.trans_b ? ek : en);
  Eigen::Map<Matrix> C(c.data(), em, en);

  // The row partition is fixed, so the blocking inside each product (and
  // hence the summation order) does not depend on the thread count.
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork && blocks > 1)
  for (std::ptrdiff_t bb = 0; bb < blocks; ++bb) {
    const auto i0 = static_cast<Eigen::Index>(static_cast<std::size_t>(bb) * kRowBlock);
    const auto rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(kRowBlock), em - i0);
    auto out = C.middleRows(i0, rows);
    if (beta == T(0)) {
      out.setZero();
    } else if (beta != T(1)) {
      out *= beta;
    }
    if (k == 0) continue;
    if (!s.trans_a && !s.trans_b) {
      out.noalias() += A.middleRows(i0, rows) * B;
    } else if (!s.trans_a) {
      out.noalias() += A.middleRows(i0, rows) * B.transpose();
    } else if (!s.trans_b) {
      out.noalias() += A.middleCols(i0, rows).transpose() * B;
    } else {
      out.noalias() += A.middleCols(i0, rows).transpose() * B.transpose();
    }
  }
}

template <typename T>
void Im2Col(const ConvShape& s, std::span<const T> x, std::span<T> col) {
  const std::size_t oh = s.out_h(), ow = s.out_w(), patch = s.patch();
  const auto images = static_cast<std::ptrdiff_t>(s.batch);
#pragma omp parallel for schedule(static) if (s.rows() * patch >= kParallelWork)
  for (std::ptrdiff_t nn = 0; nn < images; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* dst = col.data() + ((n * oh + oy) * ow + ox) * patch;
        for (std::size_t ky = 0; ky < s.kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
          for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
            T* tap = dst + (ky * s.kernel + kx) * s.in_c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.in_h) ||
                ix >= static_cast<std::ptrdiff_t>(s.in_w)) {
              for (std::size_t ch = 0; ch < s.in_c; ++ch) tap[ch] = T(0);
              continue;
            }
            const T* src = x.data() + ((n * s.in_h + static_cast<std::size_t>(iy)) * s.in_w +
                                       static_cast<std::size_t>(ix)) * s.in_c;
            for (std::size_t ch = 0; ch < s.in_c; ++ch) tap[ch] = src[ch];
          }
        }
      }
    }
  }
}

template <typename T>
void Col2Im(const ConvShape& s, std::span<const T> col, std::span<T> dx) {
  const std::size_t oh = s.out_h(), ow = s.out_w(), patch = s.patch();
  const auto images = static_cast<std::ptrdiff_t>(s.batch);
  // Images are independent; within an image the scatter order is fixed.
#pragma omp parallel for schedule(static) if (s.rows() * patch >= kParallelWork)
  for (std::ptrdiff_t nn = 0; nn < images; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* src = col.data() + ((n * oh + oy) * ow + ox) * patch;
        for (std::size_t ky = 0; ky < s.kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
          for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
            const T* tap = src + (ky * s.kernel + kx) * s.in_c;
            T* dst = dx.data() + ((n * s.in_h + static_cast<std::size_t>(iy)) * s.in_w +
                                  static_cast<std::size_t>(ix)) * s.in_c;
            for (std::size_t ch = 0; ch < s.in_c; ++ch) dst[ch] += tap[ch];
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2dForward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  const std::size_t rows = s.rows(), patch = s.patch();
  const GemmShape g{rows, s.out_c, patch, false, false};
  if (s.kernel == 1 && s.stride == 1 && s.pad == 0) {
    Gemm<T>(g, x, w, T(0), y);
  } else {
    std::vector<T> col(rows * patch);
    Im2Col<T>(s, x, col);
    Gemm<T>(g, col, w, T(0), y);
  }
  if (!bias.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      T* out = y.data() + r * s.out_c;
      for (std::size_t o = 0; o < s.out_c; ++o) out[o] += bias[o];
    }
  }
}

namespace reference {

template <typename T>
void Gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, T beta, std::span<T> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < s.k; ++p) {
        const T av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
        const T bv = s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
        acc += av * bv;
      }
      c[i * s.n + j] = (beta == T(0) ? T(0) : beta * c[i * s.n + j]) + acc;
    }
  }
}

template <typename T>
void Conv2dForward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t o = 0; o < s.out_c; ++o) {
          T acc = bias.empty() ? T(0) : bias[o];
          for (std::size_t ky = 0; ky < s.kernel; ++ky) {
            for (std::size_t kx = 0; kx < s.kernel; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.in_h) ||
                  ix >= static_cast<std::ptrdiff_t>(s.in_w)) {
                continue;
              }
              for (std::size_t ci = 0; ci < s.in_c; ++ci) {
                const T xv = x[((n * s.in_h + static_cast<std::size_t>(iy)) * s.in_w +
                                static_cast<std::size_t>(ix)) * s.in_c + ci];
                acc += xv * w[((ky * s.kernel + kx) * s.in_c + ci) * s.out_c + o];
              }
            }
          }
          y[((n * oh + oy) * ow + ox) * s.out_c + o] = acc;
        }
      }
    }
  }
}

template void Gemm<float>(const GemmShape&, std::span<const float>, std::span<const float>, float, std::span<float>);
template void Gemm<double>(const GemmShape&, std::span<const double>, std::span<const double>, double, std::span<double>);
template void Conv2dForward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                   std::span<const float>, std::span<float>);
template void Conv2dForward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                    std::span<const double>, std::span<double>);

}  // namespace reference

template void Gemm<float>(const GemmShape&, std::span<const float>, std::span<const float>, float, std::span<float>);
template void Gemm<double>(const GemmShape&, std::span<const double>, std::span<const double>, double, std::span<double>);
template void Im2Col<float>(const ConvShape&, std::span<const float>, std::span<float>);
template void Im2Col<double>(const ConvShape&, std::span<const double>, std::span<double>);
template void Col2Im<float>(const ConvShape&, std::span<const float>, std::span<float>);
template void Col2Im<double>(const ConvShape&, std::span<const double>, std::span<double>);
template void Conv2dForward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                   std::span<const float>, std::span<float>);
template void Conv2dForward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                    std::span<const double>, std::span<double>);

}  // namespace relformer::kernels
