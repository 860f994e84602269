#include "relformer/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "relformer/diff/kernels.hpp"
#include "relformer/errors.hpp"

namespace relformer::diff {

namespace {

template <typename T>
std::vector<T>* ParentGrad(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  return p.requires_grad ? &p.EnsureGrad() : nullptr;
}

[[noreturn]] void ShapeFail(const char* op, const Shape& a, const Shape& b, const std::string& why = "") {
  throw ShapeError(std::string(op) + ": incompatible shapes " + ShapeString(a) + " and " + ShapeString(b) +
                   (why.empty() ? "" : " (" + why + ")"));
}

[[noreturn]] void ShapeFail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + ShapeString(a) + " " + why);
}

Shape BroadcastShape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) ShapeFail(op, a, b, "broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into an operand for every output element, honoring broadcasting.
std::vector<std::size_t> BroadcastOffsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (rank - in.size());
    stride[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t n = NumElements(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    offsets[idx] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return offsets;
}

enum class BinaryKind { kAdd, kSub, kMul };

// Element i of the output reads element Index(i) of a broadcast operand. Shapes
// that match a trailing suffix of the output repeat with a fixed period and
// need no offset table.
struct BroadcastIndex {
  std::size_t period = 0;  // 0: use offsets
  std::vector<std::size_t> offsets;

  BroadcastIndex(const Shape& in, const Shape& out) {
    std::size_t lead = 0;
    while (lead < in.size() && in[lead] == 1) ++lead;
    const std::size_t tail = in.size() - lead;
    if (std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                   out.end() - static_cast<std::ptrdiff_t>(tail))) {
      period = std::max<std::size_t>(NumElements(in), 1);
    } else {
      offsets = BroadcastOffsets(in, out);
    }
  }
  std::size_t operator()(std::size_t i) const { return period ? i % period : offsets[i]; }
  bool full(std::size_t n) const { return period == n; }
};

template <typename T>
Tensor<T> Binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = BroadcastShape(op, a.shape(), b.shape());
  const std::size_t n = NumElements(out_shape);
  auto ia = std::make_shared<const BroadcastIndex>(a.shape(), out_shape);
  auto ib = std::make_shared<const BroadcastIndex>(b.shape(), out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(n);
  auto apply = [kind](T x, T y) { return kind == BinaryKind::kAdd ? x + y : kind == BinaryKind::kSub ? x - y : x * y; };
  if (ia->full(n) && ib->full(n)) {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[i]);
  } else if (ia->full(n) && ib->period) {
    const std::size_t period = ib->period;
    for (std::size_t base = 0; base < n; base += period) {
      for (std::size_t j = 0; j < period; ++j) out[base + j] = apply(av[base + j], bv[j]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[(*ia)(i)], bv[(*ib)(i)]);
  }
  return MakeResult<T>(op, out_shape, std::move(out), {a, b}, [kind, ia, ib, n](Node<T>& self) {
    auto* ga = ParentGrad(self, 0);
    auto* gb = ParentGrad(self, 1);
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T* g = self.grad.data();
    if (kind != BinaryKind::kMul && ia->full(n) && ib->period) {
      const std::size_t period = ib->period;
      const T sign = kind == BinaryKind::kSub ? T(-1) : T(1);
      if (ga) {
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
      }
      if (gb) {
        for (std::size_t base = 0; base < n; base += period) {
          for (std::size_t j = 0; j < period; ++j) (*gb)[j] += sign * g[base + j];
        }
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t xa = (*ia)(i);
      const std::size_t xb = (*ib)(i);
      if (ga) (*ga)[xa] += kind == BinaryKind::kMul ? g[i] * bv[xb] : g[i];
      if (gb) (*gb)[xb] += kind == BinaryKind::kMul ? g[i] * av[xa] : kind == BinaryKind::kSub ? -g[i] : g[i];
    }
  });
}

template <typename T>
Tensor<T> Unary(const char* op, const Tensor<T>& x, T (*f)(T), T (*df)(T, T)) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return MakeResult<T>(op, x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

template <typename T>
void RequireRank(const char* op, const Tensor<T>& x, std::size_t rank) {
  if (x.rank() != rank) ShapeFail(op, x.shape(), "must have rank " + std::to_string(rank));
}

}  // namespace

template <typename T>
Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("Add", BinaryKind::kAdd, a, b);
}

template <typename T>
Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("Sub", BinaryKind::kSub, a, b);
}

template <typename T>
Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("Mul", BinaryKind::kMul, a, b);
}

template <typename T>
Tensor<T> Scale(const Tensor<T>& a, T factor) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return MakeResult<T>("Scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto* ga = ParentGrad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    ShapeFail("MatMul", a.shape(), b.shape());
  }
  const std::size_t k = b.dim(0), n = b.dim(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  kernels::Gemm<T>({m, n, k, false, false}, a.data(), b.data(), T(0), out);
  return MakeResult<T>("MatMul", std::move(out_shape), std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    if (auto* ga = ParentGrad(self, 0)) {
      kernels::Gemm<T>({m, k, n, false, true}, self.grad, self.parents[1]->value, T(1), *ga);
    }
    if (auto* gb = ParentGrad(self, 1)) {
      kernels::Gemm<T>({k, n, m, true, false}, self.parents[0]->value, self.grad, T(1), *gb);
    }
  });
}

template <typename T>
Tensor<T> BatchMatMul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  RequireRank("BatchMatMul", a, 3);
  RequireRank("BatchMatMul", b, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) ShapeFail("BatchMatMul", a.shape(), b.shape());
  std::vector<T> out(batch * m * n);
  const auto av = a.data();
  const auto bv = b.data();
  const auto nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch * m * n * k >= (1u << 15))
  for (std::ptrdiff_t ii = 0; ii < nb; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    kernels::Gemm<T>({m, n, k, false, transpose_b}, av.subspan(i * m * k, m * k), bv.subspan(i * k * n, k * n),
                     T(0), std::span<T>(out).subspan(i * m * n, m * n));
  }
  return MakeResult<T>("BatchMatMul", {batch, m, n}, std::move(out), {a, b},
                       [batch, m, n, k, transpose_b](Node<T>& self) {
    auto* ga = ParentGrad(self, 0);
    auto* gb = ParentGrad(self, 1);
    const std::span<const T> g = self.grad;
    const std::span<const T> av = self.parents[0]->value;
    const std::span<const T> bv = self.parents[1]->value;
    const auto nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch * m * n * k >= (1u << 15))
    for (std::ptrdiff_t ii = 0; ii < nb; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const auto gi = g.subspan(i * m * n, m * n);
      const auto ai = av.subspan(i * m * k, m * k);
      const auto bi = bv.subspan(i * k * n, k * n);
      if (ga) {
        // dA = dC * op(B)^T
        kernels::Gemm<T>({m, k, n, false, !transpose_b}, gi, bi, T(1),
                         std::span<T>(*ga).subspan(i * m * k, m * k));
      }
      if (gb) {
        auto gbi = std::span<T>(*gb).subspan(i * k * n, k * n);
        if (transpose_b) {
          // B is [n, k]: dB = dC^T * A
          kernels::Gemm<T>({n, k, m, true, false}, gi, ai, T(1), gbi);
        } else {
          kernels::Gemm<T>({k, n, m, true, false}, ai, gi, T(1), gbi);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> Conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  RequireRank("Conv2d", x, 4);
  RequireRank("Conv2d", w, 4);
  if (w.dim(0) != w.dim(1) || w.dim(2) != x.dim(3)) ShapeFail("Conv2d", x.shape(), w.shape(), "weight");
  if (stride == 0) ShapeFail("Conv2d", x.shape(), "stride must be positive");
  kernels::ConvShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(3), w.dim(0), stride, pad};
  if (x.dim(1) + 2 * pad < s.kernel || x.dim(2) + 2 * pad < s.kernel) {
    ShapeFail("Conv2d", x.shape(), w.shape(), "kernel larger than padded input");
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != s.out_c)) ShapeFail("Conv2d", w.shape(), bias.shape(), "bias");

  const bool pointwise = s.kernel == 1 && s.stride == 1 && s.pad == 0;
  auto col = std::make_shared<std::vector<T>>();
  if (!pointwise) {
    col->resize(s.rows() * s.patch());
    kernels::Im2Col<T>(s, x.data(), *col);
  }
  std::vector<T> out(s.rows() * s.out_c);
  const kernels::GemmShape g{s.rows(), s.out_c, s.patch(), false, false};
  kernels::Gemm<T>(g, pointwise ? x.data() : std::span<const T>(*col), w.data(), T(0), out);
  if (has_bias) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < s.rows(); ++r) {
      for (std::size_t o = 0; o < s.out_c; ++o) out[r * s.out_c + o] += bv[o];
    }
  }
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  if (!GradEnabled()) col.reset();
  return MakeResult<T>("Conv2d", {s.batch, s.out_h(), s.out_w(), s.out_c}, std::move(out), std::move(parents),
                       [s, pointwise, col, has_bias](Node<T>& self) {
    const std::span<const T> g = self.grad;
    const std::span<const T> w = self.parents[1]->value;
    const std::span<const T> cols = pointwise ? std::span<const T>(self.parents[0]->value) : std::span<const T>(*col);
    if (auto* gw = ParentGrad(self, 1)) {
      kernels::Gemm<T>({s.patch(), s.out_c, s.rows(), true, false}, cols, g, T(1), *gw);
    }
    if (has_bias) {
      if (auto* gb = ParentGrad(self, 2)) {
        for (std::size_t r = 0; r < s.rows(); ++r) {
          for (std::size_t o = 0; o < s.out_c; ++o) (*gb)[o] += g[r * s.out_c + o];
        }
      }
    }
    if (auto* gx = ParentGrad(self, 0)) {
      if (pointwise) {
        kernels::Gemm<T>({s.rows(), s.patch(), s.out_c, false, true}, g, w, T(1), *gx);
      } else {
        std::vector<T> dcol(s.rows() * s.patch());
        kernels::Gemm<T>({s.rows(), s.patch(), s.out_c, false, true}, g, w, T(0), dcol);
        kernels::Col2Im<T>(s, dcol, *gx);
      }
    }
  });
}

template <typename T>
Tensor<T> Relu(const Tensor<T>& x) {
  return Unary<T>("Relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> Gelu(const Tensor<T>& x) {
  return Unary<T>(
      "Gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> Exp(const Tensor<T>& x) {
  return Unary<T>("Exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> Abs(const Tensor<T>& x) {
  return Unary<T>("Abs", x, [](T v) { return std::abs(v); },
                  [](T v, T) { return v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0); });
}

template <typename T>
Tensor<T> Softmax(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() == 0) ShapeFail("Softmax", x.shape(), "needs a non-empty last axis");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * c;
    T* o = out.data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T total = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return MakeResult<T>("Softmax", x.shape(), std::move(out), {x}, [rows, c](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * c;
      const T* g = self.grad.data() + r * c;
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> LayerNorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) ShapeFail("LayerNorm", x.shape(), "needs rank >= 1");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) ShapeFail("LayerNorm", x.shape(), gamma.shape(), "affine");
  const std::size_t rows = x.numel() / c;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * c;
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (in[j] - mean) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return MakeResult<T>("LayerNorm", x.shape(), std::move(out), {x, gamma, beta},
                       [rows, c, xhat, inv_std](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    auto* gg = ParentGrad(self, 1);
    auto* gb = ParentGrad(self, 2);
    const auto& gamma = self.parents[1]->value;
    std::vector<T> dh(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * c;
      const T* h = xhat->data() + r * c;
      T mean_dh = T(0), mean_dh_h = T(0);
      for (std::size_t j = 0; j < c; ++j) {
        if (gg) (*gg)[j] += g[j] * h[j];
        if (gb) (*gb)[j] += g[j];
        dh[j] = g[j] * gamma[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * h[j];
      }
      if (!gx) continue;
      mean_dh /= static_cast<T>(c);
      mean_dh_h /= static_cast<T>(c);
      for (std::size_t j = 0; j < c; ++j) {
        (*gx)[r * c + j] += (*inv_std)[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
      }
    }
  });
}

template <typename T>
Tensor<T> Dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw InvalidInput("Dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  // Keep with probability 1 - p: a raw 64-bit draw at or above p * 2^64.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 64));
  for (auto& m : *mask) m = rng() >= threshold ? scale : T(0);
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return MakeResult<T>("Dropout", x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < mask->size(); ++i) (*gx)[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> Sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return MakeResult<T>("Sum", {}, {total}, {x}, [](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (auto& g : *gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> Mean(const Tensor<T>& x) {
  if (x.numel() == 0) ShapeFail("Mean", x.shape(), "is empty");
  return Scale(Sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> SumLastAxis(const Tensor<T>& x) {
  if (x.rank() < 1) ShapeFail("SumLastAxis", x.shape(), "needs rank >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = c == 0 ? 0 : x.numel() / c;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> out(rows, T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r] += xv[r * c + j];
  }
  return MakeResult<T>("SumLastAxis", std::move(out_shape), std::move(out), {x}, [rows, c](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += self.grad[r];
    }
  });
}

template <typename T>
Tensor<T> L1Distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() < 1) ShapeFail("L1Distance", a.shape(), b.shape());
  return SumLastAxis(Abs(Sub(a, b)));
}

template <typename T>
Tensor<T> Concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("Concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) ShapeFail("Concat", first, "has no axis " + std::to_string(axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) ShapeFail("Concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) ShapeFail("Concat", first, p.shape());
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<T> out(NumElements(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * out_row + offset);
    }
    widths.push_back(w);
    offset += w;
  }
  return MakeResult<T>("Concat", std::move(out_shape), std::move(out), parts,
                       [outer, out_row, widths](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::size_t w = widths[i];
      if (auto* g = ParentGrad(self, i)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * out_row + offset;
          T* dst = g->data() + o * w;
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      offset += w;
    }
  });
}

template <typename T>
Tensor<T> Reshape(const Tensor<T>& x, Shape shape) {
  if (NumElements(shape) != x.numel()) ShapeFail("Reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return MakeResult<T>("Reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> Permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) ShapeFail("Permute", x.shape(), "axes count mismatch");
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) ShapeFail("Permute", x.shape(), "invalid axes");
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_stride[d] = s;
    s *= x.dim(d);
  }
  std::vector<std::size_t> stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = x.dim(axes[d]);
    stride[d] = in_stride[axes[d]];
  }
  // Source offset of each output element.
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*src)[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
  return MakeResult<T>("Permute", std::move(out_shape), std::move(out), {x}, [src](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < src->size(); ++i) (*gx)[(*src)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> Slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis)) {
    ShapeFail("Slice", x.shape(),
              "cannot take [" + std::to_string(start) + ", " + std::to_string(start + length) + ") on axis " +
                  std::to_string(axis));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t in_row = x.dim(axis) * inner;
  const std::size_t w = length * inner;
  const std::size_t off = start * inner;
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(outer * w);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * in_row + off, w, out.data() + o * w);
  return MakeResult<T>("Slice", std::move(out_shape), std::move(out), {x}, [outer, in_row, w, off](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < w; ++j) (*gx)[o * in_row + off + j] += self.grad[o * w + j];
    }
  });
}

template <typename T>
Tensor<T> BroadcastTo(const Tensor<T>& x, const Shape& shape) {
  if (BroadcastShape("BroadcastTo", x.shape(), shape) != shape) ShapeFail("BroadcastTo", x.shape(), shape);
  auto offsets = std::make_shared<std::vector<std::size_t>>(BroadcastOffsets(x.shape(), shape));
  const auto xv = x.data();
  std::vector<T> out(offsets->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*offsets)[i]];
  return MakeResult<T>("BroadcastTo", shape, std::move(out), {x}, [offsets](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < offsets->size(); ++i) (*gx)[(*offsets)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> Embedding(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  RequireRank("Embedding", table, 2);
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (std::size_t idx : indices) {
    if (idx >= vocab) ShapeFail("Embedding", table.shape(), "has no row " + std::to_string(idx));
  }
  std::vector<T> out(indices.size() * width);
  const auto tv = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(tv.data() + indices[i] * width, width, out.data() + i * width);
  }
  return MakeResult<T>("Embedding", {indices.size(), width}, std::move(out), {table},
                       [indices, width](Node<T>& self) {
    auto* gt = ParentGrad(self, 0);
    if (!gt) return;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) (*gt)[indices[i] * width + j] += self.grad[i * width + j];
    }
  });
}

namespace {

struct PoolGeometry {
  std::size_t n, h, w, c, oh, ow, kernel, stride;
};

template <typename T>
PoolGeometry CheckPool(const char* op, const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  RequireRank(op, x, 4);
  if (kernel == 0 || stride == 0 || x.dim(1) < kernel || x.dim(2) < kernel) {
    ShapeFail(op, x.shape(), "cannot pool with kernel " + std::to_string(kernel));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), (x.dim(1) - kernel) / stride + 1, (x.dim(2) - kernel) / stride + 1,
          kernel, stride};
}

}  // namespace

template <typename T>
Tensor<T> AvgPool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  const PoolGeometry p = CheckPool("AvgPool2d", x, kernel, stride);
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  const auto xv = x.data();
  std::vector<T> out(p.n * p.oh * p.ow * p.c, T(0));
  auto at = [p](std::size_t n, std::size_t y, std::size_t xx) { return ((n * p.h + y) * p.w + xx) * p.c; };
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t oy = 0; oy < p.oh; ++oy) {
      for (std::size_t ox = 0; ox < p.ow; ++ox) {
        T* o = out.data() + ((n * p.oh + oy) * p.ow + ox) * p.c;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const T* in = xv.data() + at(n, oy * stride + ky, ox * stride + kx);
            for (std::size_t ch = 0; ch < p.c; ++ch) o[ch] += in[ch];
          }
        }
        for (std::size_t ch = 0; ch < p.c; ++ch) o[ch] *= inv;
      }
    }
  }
  return MakeResult<T>("AvgPool2d", {p.n, p.oh, p.ow, p.c}, std::move(out), {x}, [p, inv, at](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t n = 0; n < p.n; ++n) {
      for (std::size_t oy = 0; oy < p.oh; ++oy) {
        for (std::size_t ox = 0; ox < p.ow; ++ox) {
          const T* g = self.grad.data() + ((n * p.oh + oy) * p.ow + ox) * p.c;
          for (std::size_t ky = 0; ky < p.kernel; ++ky) {
            for (std::size_t kx = 0; kx < p.kernel; ++kx) {
              T* d = gx->data() + at(n, oy * p.stride + ky, ox * p.stride + kx);
              for (std::size_t ch = 0; ch < p.c; ++ch) d[ch] += g[ch] * inv;
            }
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> MaxPool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  const PoolGeometry p = CheckPool("MaxPool2d", x, kernel, stride);
  const auto xv = x.data();
  const std::size_t count = p.n * p.oh * p.ow * p.c;
  std::vector<T> out(count, -std::numeric_limits<T>::infinity());
  auto argmax = std::make_shared<std::vector<std::size_t>>(count, 0);
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t oy = 0; oy < p.oh; ++oy) {
      for (std::size_t ox = 0; ox < p.ow; ++ox) {
        const std::size_t base = ((n * p.oh + oy) * p.ow + ox) * p.c;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t src = ((n * p.h + oy * stride + ky) * p.w + ox * stride + kx) * p.c;
            for (std::size_t ch = 0; ch < p.c; ++ch) {
              if (xv[src + ch] > out[base + ch]) {
                out[base + ch] = xv[src + ch];
                (*argmax)[base + ch] = src + ch;
              }
            }
          }
        }
      }
    }
  }
  return MakeResult<T>("MaxPool2d", {p.n, p.oh, p.ow, p.c}, std::move(out), {x}, [argmax](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < argmax->size(); ++i) (*gx)[(*argmax)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> GlobalAvgPool(const Tensor<T>& x) {
  RequireRank("GlobalAvgPool", x, 4);
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  if (hw == 0) ShapeFail("GlobalAvgPool", x.shape(), "has no spatial extent");
  const T inv = T(1) / static_cast<T>(hw);
  const auto xv = x.data();
  std::vector<T> out(n * c, T(0));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t s = 0; s < hw; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += xv[(b * hw + s) * c + ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] *= inv;
  }
  return MakeResult<T>("GlobalAvgPool", {n, c}, std::move(out), {x}, [n, hw, c, inv](Node<T>& self) {
    auto* gx = ParentGrad(self, 0);
    if (!gx) return;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t s = 0; s < hw; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) (*gx)[(b * hw + s) * c + ch] += self.grad[b * c + ch] * inv;
      }
    }
  });
}

#define RELFORMER_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> Add<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> Sub<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> Mul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> Scale<T>(const Tensor<T>&, T);                                                  \
  template Tensor<T> MatMul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> BatchMatMul<T>(const Tensor<T>&, const Tensor<T>&, bool);                       \
  template Tensor<T> Conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,    \
                               std::size_t);                                                         \
  template Tensor<T> Relu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> Gelu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> Exp<T>(const Tensor<T>&);                                                       \
  template Tensor<T> Abs<T>(const Tensor<T>&);                                                       \
  template Tensor<T> Softmax<T>(const Tensor<T>&);                                                   \
  template Tensor<T> LayerNorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> Dropout<T>(const Tensor<T>&, double, bool, std::mt19937_64&);                   \
  template Tensor<T> Sum<T>(const Tensor<T>&);                                                       \
  template Tensor<T> Mean<T>(const Tensor<T>&);                                                      \
  template Tensor<T> SumLastAxis<T>(const Tensor<T>&);                                               \
  template Tensor<T> L1Distance<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> Concat<T>(const std::vector<Tensor<T>>&, std::size_t);                          \
  template Tensor<T> Reshape<T>(const Tensor<T>&, Shape);                                            \
  template Tensor<T> Permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                  \
  template Tensor<T> Slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);              \
  template Tensor<T> BroadcastTo<T>(const Tensor<T>&, const Shape&);                                 \
  template Tensor<T> Embedding<T>(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> AvgPool2d<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> MaxPool2d<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> GlobalAvgPool<T>(const Tensor<T>&);

RELFORMER_INSTANTIATE_OPS(float)
RELFORMER_INSTANTIATE_OPS(double)

}  // namespace relformer::diff
