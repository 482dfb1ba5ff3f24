#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "t4t/array.hpp"
#include "t4t/blas.hpp"
#include "t4t/tape.hpp"

// Forward kernels with reverse-mode rules. No implicit broadcasting: every
// binary kernel requires identical shapes except where the contract names a
// bias vector. Use broadcast_to() to expand explicitly.

namespace t4t {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(s));
  }
}

inline std::size_t checked_axis(const Shape& s, int axis, const char* op) {
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + to_string(s));
  }
  return static_cast<std::size_t>(axis);
}

// outer * extent * inner decomposition around an axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Calls fn(i, src) for every output index i in row-major order over `shape`,
// where src advances by src_stride per axis.
template <class Fn>
void for_each_strided(const Shape& shape, const std::vector<std::size_t>& src_stride, Fn&& fn) {
  const std::size_t rank = shape.size();
  const std::size_t total = numel(shape);
  if (total == 0) return;
  if (rank == 0) {
    fn(0, 0);
    return;
  }
  const std::size_t inner = shape[rank - 1], step = src_stride[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t base = 0;
  for (std::size_t i = 0; i < total; i += inner) {
    std::size_t src = base;
    for (std::size_t j = 0; j < inner; ++j, src += step) fn(i + j, src);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      base += src_stride[d];
      if (idx[d] < shape[d]) break;
      base -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

// Branch-free exp for float (Cephes polynomial, ~1 ulp on the clamped
// range) so the loops vectorize; double defers to std::exp.
template <Scalar T>
inline T fast_exp(T x) {
  if constexpr (std::same_as<T, double>) {
    return std::exp(x);
  } else {
    constexpr float kRound = 12582912.0f;  // 1.5 * 2^23
    x = x < -87.0f ? -87.0f : x;
    x = x > 88.0f ? 88.0f : x;
    const float r = x * 1.44269504088896341f + kRound;
    const std::int32_t n = std::bit_cast<std::int32_t>(r) - std::bit_cast<std::int32_t>(kRound);
    const float fx = r - kRound;
    x = x - fx * 0.693359375f + fx * 2.12194440e-4f;
    float y = 1.9875691500e-4f;
    y = y * x + 1.3981999507e-3f;
    y = y * x + 8.3334519073e-3f;
    y = y * x + 4.1665795894e-2f;
    y = y * x + 1.6666665459e-1f;
    y = y * x + 5.0000001201e-1f;
    y = y * x * x + x + 1.0f;
    return y * std::bit_cast<float>((n + 127) << 23);
  }
}

template <Scalar T>
inline T fast_tanh(T u) {
  u = u < T(-20) ? T(-20) : u;
  u = u > T(20) ? T(20) : u;
  return T(1) - T(2) / (fast_exp(T(2) * u) + T(1));
}

template <Scalar T>
void accumulate(const Array<T>& target, std::span<const T> delta) {
  if (!target.requires_grad()) return;
  auto g = target.grad_mut();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Bilinear source coordinates, align_corners = false:
//   src = (dst + 0.5) * in / out - 0.5, clamped below at 0,
//   lo = floor(src) (clamped to in-1), hi = min(lo + 1, in - 1), frac = src - lo.
struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <Scalar T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Array<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (detail::needs_record<T>({&a, &b})) {
    detail::record(out, "add", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      detail::accumulate(a, out.grad());
      detail::accumulate(b, out.grad());
    });
  }
  return out;
}

template <Scalar T>
Array<T> mul(const Array<T>& a, const Array<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Array<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (detail::needs_record<T>({&a, &b})) {
    detail::record(out, "mul", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <Scalar T>
Array<T> scale(const Array<T>& a, T factor) {
  Array<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "scale", [a, out, factor]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// GELU, tanh approximation:
//   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <Scalar T>
Array<T> gelu(const Array<T>& a) {
  constexpr T kC = T(0.044715);
  const T k_sqrt_2_pi = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  Array<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T v = x[i];
    o[i] = T(0.5) * v * (T(1) + detail::fast_tanh(k_sqrt_2_pi * (v + kC * v * v * v)));
  }
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "gelu", [a, out, k_sqrt_2_pi]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = a[i];
        const T t = detail::fast_tanh(k_sqrt_2_pi * (v + kC * v * v * v));
        const T dt = (T(1) - t * t) * k_sqrt_2_pi * (T(1) + T(3) * kC * v * v);
        ga[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    });
  }
  return out;
}

// ------------------------------------------------------------------ reductions

template <Scalar T>
Array<T> sum(const Array<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  Array<T> out = Array<T>::scalar(static_cast<T>(acc));
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "sum", [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T g = out.grad()[0];
      for (T& v : a.grad_mut()) v += g;
    });
  }
  return out;
}

// Mean over one axis; the axis is removed from the result.
template <Scalar T>
Array<T> mean_reduce(const Array<T>& a, int axis) {
  const std::size_t ax = detail::checked_axis(a.shape(), axis, "mean_reduce");
  const auto sp = detail::split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Array<T> out(out_shape);
  auto o = out.data();
  auto x = a.data();
  const double inv = sp.extent ? 1.0 / static_cast<double>(sp.extent) : 0.0;
  for (std::size_t p = 0; p < sp.outer; ++p) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      double acc = 0.0;
      for (std::size_t j = 0; j < sp.extent; ++j) acc += x[(p * sp.extent + j) * sp.inner + q];
      o[p * sp.inner + q] = static_cast<T>(acc * inv);
    }
  }
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "mean_reduce", [a, out, sp, inv]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t p = 0; p < sp.outer; ++p)
        for (std::size_t j = 0; j < sp.extent; ++j)
          for (std::size_t q = 0; q < sp.inner; ++q)
            ga[(p * sp.extent + j) * sp.inner + q] += g[p * sp.inner + q] * static_cast<T>(inv);
    });
  }
  return out;
}

// Softmax along an axis with max subtraction.
template <Scalar T>
Array<T> softmax(const Array<T>& a, int axis) {
  const std::size_t ax = detail::checked_axis(a.shape(), axis, "softmax");
  const auto sp = detail::split_at(a.shape(), ax);
  Array<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t p = 0; p < sp.outer; ++p) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      const std::size_t base = p * sp.extent * sp.inner + q;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < sp.extent; ++j) mx = std::max(mx, x[base + j * sp.inner]);
      for (std::size_t j = 0; j < sp.extent; ++j) {
        o[base + j * sp.inner] = detail::fast_exp(x[base + j * sp.inner] - mx);
      }
      T total = 0;
      for (std::size_t j = 0; j < sp.extent; ++j) total += o[base + j * sp.inner];
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < sp.extent; ++j) o[base + j * sp.inner] *= inv;
    }
  }
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "softmax", [a, out, sp]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.grad_mut();
      for (std::size_t p = 0; p < sp.outer; ++p) {
        for (std::size_t q = 0; q < sp.inner; ++q) {
          const std::size_t base = p * sp.extent * sp.inner + q;
          T dot = 0;
          for (std::size_t j = 0; j < sp.extent; ++j) {
            const std::size_t i = base + j * sp.inner;
            dot += g[i] * y[i];
          }
          for (std::size_t j = 0; j < sp.extent; ++j) {
            const std::size_t i = base + j * sp.inner;
            ga[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Normalizes over the last axis, then applies gamma * x_hat + beta.
template <Scalar T>
Array<T> layer_norm(const Array<T>& a, const Array<T>& gamma, const Array<T>& beta,
                    T eps = T(1e-6)) {
  if (a.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t width = a.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " do not match last extent of " +
                     to_string(a.shape()));
  }
  const std::size_t rows = width ? a.size() / width : 0;
  Array<T> out(a.shape());
  std::vector<T> x_hat(a.size());
  std::vector<T> inv_std(rows);
  auto x = a.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += row[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const T xh = static_cast<T>(row[j] - mean) * is;
      x_hat[r * width + j] = xh;
      o[r * width + j] = gamma[j] * xh + beta[j];
    }
  }
  if (detail::needs_record<T>({&a, &gamma, &beta})) {
    detail::record(out, "layer_norm",
                   [a, gamma, beta, out, x_hat = std::move(x_hat), inv_std = std::move(inv_std),
                    rows, width]() mutable {
                     if (!out.has_grad()) return;
                     auto g = out.grad();
                     if (gamma.requires_grad() || beta.requires_grad()) {
                       std::vector<T> dg(width, T(0)), db(width, T(0));
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < width; ++j) {
                           dg[j] += g[r * width + j] * x_hat[r * width + j];
                           db[j] += g[r * width + j];
                         }
                       detail::accumulate(gamma, std::span<const T>(dg));
                       detail::accumulate(beta, std::span<const T>(db));
                     }
                     if (!a.requires_grad()) return;
                     auto ga = a.grad_mut();
                     const T inv_w = T(1) / static_cast<T>(width);
                     for (std::size_t r = 0; r < rows; ++r) {
                       T mean_d = 0, mean_dx = 0;
                       for (std::size_t j = 0; j < width; ++j) {
                         const T d = g[r * width + j] * gamma[j];
                         mean_d += d;
                         mean_dx += d * x_hat[r * width + j];
                       }
                       mean_d *= inv_w;
                       mean_dx *= inv_w;
                       for (std::size_t j = 0; j < width; ++j) {
                         const T d = g[r * width + j] * gamma[j];
                         ga[r * width + j] +=
                             inv_std[r] * (d - mean_d - x_hat[r * width + j] * mean_dx);
                       }
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------- shape moves

template <Scalar T>
Array<T> reshape(const Array<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  Array<T> out(std::move(shape), a.storage());
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "reshape", [a, out]() mutable {
      if (!out.has_grad()) return;
      detail::accumulate(a, out.grad());
    });
  }
  return out;
}

// out.shape[i] = a.shape[perm[i]].
template <Scalar T>
Array<T> permute(const Array<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t rank = a.rank();
  if (perm.size() != rank) {
    throw ShapeError("permute: permutation of length " + std::to_string(perm.size()) +
                     " for shape " + to_string(a.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.dim(perm[i]);
  const auto in_strides = detail::strides_of(a.shape());
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_strides[perm[i]];

  Array<T> out(out_shape);
  auto o = out.data();
  auto x = a.data();
  detail::for_each_strided(out_shape, src_stride, [&](std::size_t i, std::size_t src) { o[i] = x[src]; });
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "permute", [a, out, out_shape, src_stride]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      detail::for_each_strided(out_shape, src_stride,
                               [&](std::size_t i, std::size_t src) { ga[src] += g[i]; });
    });
  }
  return out;
}

// Right-aligned expansion; each source extent must equal the target or be 1.
template <Scalar T>
Array<T> broadcast_to(const Array<T>& a, const Shape& shape) {
  if (a.rank() > shape.size()) {
    throw ShapeError("broadcast_to: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  const std::size_t lead = shape.size() - a.rank();
  Shape padded(lead, 1);
  padded.insert(padded.end(), a.shape().begin(), a.shape().end());
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (padded[i] != shape[i] && padded[i] != 1) {
      throw ShapeError("broadcast_to: " + to_string(a.shape()) + " -> " + to_string(shape));
    }
  }
  const auto in_strides = detail::strides_of(padded);
  std::vector<std::size_t> offsets(numel(shape));
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      std::size_t src = 0;
      for (std::size_t d = 0; d < shape.size(); ++d)
        if (padded[d] != 1) src += idx[d] * in_strides[d];
      offsets[i] = src;
      for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  Array<T> out(shape);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[offsets[i]];
  if (detail::needs_record<T>({&a})) {
    detail::record(out, "broadcast_to", [a, out, offsets = std::move(offsets)]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[offsets[i]] += g[i];
    });
  }
  return out;
}

// ------------------------------------------------------------- contractions

namespace detail {

inline void matmul_dims(const Shape& a, const Shape& b, bool trans_b, std::size_t& batch,
                        std::size_t& m, std::size_t& k, std::size_t& n, Shape& out,
                        const char* op) {
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                     to_string(b));
  };
  if (a.size() < 2 || a.size() != b.size()) fail();
  const std::size_t r = a.size();
  batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a[i] != b[i]) fail();
    batch *= a[i];
  }
  m = a[r - 2];
  k = a[r - 1];
  const std::size_t bk = trans_b ? b[r - 1] : b[r - 2];
  n = trans_b ? b[r - 2] : b[r - 1];
  if (bk != k) fail();
  out = a;
  out[r - 1] = n;
}

}  // namespace detail

// [..., m, k] x [..., k, n] -> [..., m, n]; batch extents must be equal.
template <Scalar T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
  std::size_t batch, m, k, n;
  Shape out_shape;
  detail::matmul_dims(a.shape(), b.shape(), false, batch, m, k, n, out_shape, "matmul");
  Array<T> out(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm<T>(false, false, m, n, k, T(1), a.data().data() + i * m * k,
            b.data().data() + i * k * n, T(0), out.data().data() + i * m * n);
  }
  if (detail::needs_record<T>({&a, &b})) {
    detail::record(out, "matmul", [a, b, out, batch, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      for (std::size_t i = 0; i < batch; ++i) {
        if (a.requires_grad())  // dA = G B^T
          gemm<T>(false, true, m, k, n, T(1), g + i * m * n, b.data().data() + i * k * n, T(1),
                  a.grad_mut().data() + i * m * k);
        if (b.requires_grad())  // dB = A^T G
          gemm<T>(true, false, k, n, m, T(1), a.data().data() + i * m * k, g + i * m * n, T(1),
                  b.grad_mut().data() + i * k * n);
      }
    });
  }
  return out;
}

// [..., m, k] x [..., n, k]^T -> [..., m, n].
template <Scalar T>
Array<T> matmul_nt(const Array<T>& a, const Array<T>& b) {
  std::size_t batch, m, k, n;
  Shape out_shape;
  detail::matmul_dims(a.shape(), b.shape(), true, batch, m, k, n, out_shape, "matmul_nt");
  Array<T> out(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm<T>(false, true, m, n, k, T(1), a.data().data() + i * m * k,
            b.data().data() + i * n * k, T(0), out.data().data() + i * m * n);
  }
  if (detail::needs_record<T>({&a, &b})) {
    detail::record(out, "matmul_nt", [a, b, out, batch, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      for (std::size_t i = 0; i < batch; ++i) {
        if (a.requires_grad())  // dA = G B
          gemm<T>(false, false, m, k, n, T(1), g + i * m * n, b.data().data() + i * n * k, T(1),
                  a.grad_mut().data() + i * m * k);
        if (b.requires_grad())  // dB = G^T A
          gemm<T>(true, false, n, k, m, T(1), g + i * m * n, a.data().data() + i * m * k, T(1),
                  b.grad_mut().data() + i * n * k);
      }
    });
  }
  return out;
}

// x[..., in] W[in, out] + bias[out]. An empty bias (size 0) means none.
template <Scalar T>
Array<T> linear(const Array<T>& x, const Array<T>& weight, const Array<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " +
                     to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(0);
  const std::size_t out_w = weight.dim(1);
  const bool has_bias = bias.size() != 0;
  if (has_bias && bias.shape() != Shape{out_w}) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " vs weight " +
                     to_string(weight.shape()));
  }
  const std::size_t rows = in ? x.size() / in : 0;
  Shape out_shape = x.shape();
  out_shape.back() = out_w;
  Array<T> out(out_shape);
  T* o = out.data().data();
  if (has_bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), o + r * out_w);
  }
  gemm<T>(false, false, rows, out_w, in, T(1), x.data().data(), weight.data().data(),
          has_bias ? T(1) : T(0), o);
  if (detail::needs_record<T>({&x, &weight, &bias})) {
    detail::record(out, "linear", [x, weight, bias, out, rows, in, out_w, has_bias]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (x.requires_grad())
        gemm<T>(false, true, rows, in, out_w, T(1), g, weight.data().data(), T(1),
                x.grad_mut().data());
      if (weight.requires_grad())
        gemm<T>(true, false, in, out_w, rows, T(1), x.data().data(), g, T(1),
                weight.grad_mut().data());
      if (has_bias && bias.requires_grad()) {
        auto gb = bias.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out_w; ++j) gb[j] += g[r * out_w + j];
      }
    });
  }
  return out;
}

// ------------------------------------------------------------------- spatial

// [B, N, C] tokens (row-major h x w grid) <-> [B, C, h, w] maps.
template <Scalar T>
Array<T> tokens_to_map(const Array<T>& tokens, std::size_t h, std::size_t w) {
  detail::require_rank(tokens.shape(), 3, "tokens_to_map");
  if (tokens.dim(1) != h * w) {
    throw ShapeError("tokens_to_map: " + std::to_string(tokens.dim(1)) + " tokens for grid " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  return reshape(permute(tokens, {0, 2, 1}), Shape{b, c, h, w});
}

template <Scalar T>
Array<T> map_to_tokens(const Array<T>& map) {
  detail::require_rank(map.shape(), 4, "map_to_tokens");
  const std::size_t b = map.dim(0), c = map.dim(1), n = map.dim(2) * map.dim(3);
  return permute(reshape(map, Shape{b, c, n}), {0, 2, 1});
}

// k x k patches at stride s (zero padding (k - s) / 2 on each side) mapped by
// one linear layer: x[B, C, H, W], weight[C*k*k, E] ((c, ky, kx) row order),
// bias[E] -> tokens [B, (H/s)*(W/s), E].
template <Scalar T>
Array<T> patch_tokens(const Array<T>& x, const Array<T>& weight, const Array<T>& bias,
                      std::size_t kernel, std::size_t stride) {
  detail::require_rank(x.shape(), 4, "patch_projection");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (stride == 0 || kernel < stride || (kernel - stride) % 2 != 0) {
    throw ShapeError("patch_projection: kernel " + std::to_string(kernel) + " stride " +
                     std::to_string(stride) + " unsupported");
  }
  if (h % stride != 0 || w % stride != 0) {
    throw ShapeError("patch_projection: spatial extent " + to_string(x.shape()) +
                     " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t cols = ch * kernel * kernel;
  if (weight.rank() != 2 || weight.dim(0) != cols) {
    throw ShapeError("patch_projection: weight " + to_string(weight.shape()) +
                     " does not match input " + to_string(x.shape()) + " with kernel " +
                     std::to_string(kernel));
  }
  const std::size_t oh = h / stride, ow = w / stride, rows = batch * oh * ow;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((kernel - stride) / 2);

  // index[row * cols + col] = source offset, or -1 for padding
  std::vector<std::ptrdiff_t> index(rows * cols);
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t row = (bi * oh + oy) * ow + ox;
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t ky = 0; ky < kernel; ++ky)
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
              const std::size_t col = (c * kernel + ky) * kernel + kx;
              index[row * cols + col] =
                  (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                   ix >= static_cast<std::ptrdiff_t>(w))
                      ? -1
                      : static_cast<std::ptrdiff_t>(((bi * ch + c) * h + static_cast<std::size_t>(iy)) * w +
                                                    static_cast<std::size_t>(ix));
            }
      }
  Array<T> unfolded(Shape{batch, oh * ow, cols});
  auto u = unfolded.data();
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = index[i] < 0 ? T(0) : x[static_cast<std::size_t>(index[i])];
  if (detail::needs_record<T>({&x})) {
    detail::record(unfolded, "unfold", [x, unfolded, index = std::move(index)]() mutable {
      if (!unfolded.has_grad() || !x.requires_grad()) return;
      auto g = unfolded.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (index[i] >= 0) gx[static_cast<std::size_t>(index[i])] += g[i];
    });
  }
  return linear(unfolded, weight, bias);
}

// Same projection returned as a [B, E, H/s, W/s] map.
template <Scalar T>
Array<T> strided_patch_projection(const Array<T>& x, const Array<T>& weight,
                                  const Array<T>& bias, std::size_t kernel, std::size_t stride) {
  Array<T> tokens = patch_tokens(x, weight, bias, kernel, stride);
  return tokens_to_map(tokens, x.dim(2) / stride, x.dim(3) / stride);
}

// Bilinear resampling of [B, C, h, w] to [B, C, out_h, out_w] with
// align_corners = false. Per axis, output index d samples source coordinate
//   src = max(0, (d + 0.5) * in / out - 0.5)
// between lo = floor(src) and hi = min(lo + 1, in - 1) with weight
// frac = src - lo, as lo_value + frac * (hi_value - lo_value); rows first,
// then columns. Same-size resampling and constant inputs reproduce exactly.
template <Scalar T>
Array<T> bilinear_resize(const Array<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(x.shape(), 4, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: target extents must be >= 1");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == 0 || w == 0) throw ShapeError("bilinear_resize: empty input " + to_string(x.shape()));
  const auto ty = detail::lerp_taps(h, out_h);
  const auto tx = detail::lerp_taps(w, out_w);
  Array<T> out(Shape{x.dim(0), x.dim(1), out_h, out_w});
  auto o = out.data();
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * h * w;
    T* dst = o.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& yt = ty[oy];
      const T fy = static_cast<T>(yt.frac);
      const T* r0 = src + yt.lo * w;
      const T* r1 = src + yt.hi * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& xt = tx[ox];
        const T fx = static_cast<T>(xt.frac);
        const T top = r0[xt.lo] + fx * (r0[xt.hi] - r0[xt.lo]);
        const T bot = r1[xt.lo] + fx * (r1[xt.hi] - r1[xt.lo]);
        dst[oy * out_w + ox] = top + fy * (bot - top);
      }
    }
  }
  if (detail::needs_record<T>({&x})) {
    detail::record(out, "bilinear_resize", [x, out, ty, tx, planes, h, w, out_h, out_w]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t p = 0; p < planes; ++p) {
        T* dst = gx.data() + p * h * w;
        const T* gp = g.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& yt = ty[oy];
          const T fy = static_cast<T>(yt.frac);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& xt = tx[ox];
            const T fx = static_cast<T>(xt.frac);
            const T v = gp[oy * out_w + ox];
            dst[yt.lo * w + xt.lo] += v * (T(1) - fy) * (T(1) - fx);
            dst[yt.lo * w + xt.hi] += v * (T(1) - fy) * fx;
            dst[yt.hi * w + xt.lo] += v * fy * (T(1) - fx);
            dst[yt.hi * w + xt.hi] += v * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

// Non-overlapping r x r mean pooling of [B, C, H, W].
template <Scalar T>
Array<T> avg_pool2d(const Array<T>& x, std::size_t r) {
  detail::require_rank(x.shape(), 4, "avg_pool2d");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (r == 0 || h % r != 0 || w % r != 0) {
    throw ShapeError("avg_pool2d: " + to_string(x.shape()) + " not divisible by " +
                     std::to_string(r));
  }
  const std::size_t oh = h / r, ow = w / r;
  const T inv = T(1) / static_cast<T>(r * r);
  Array<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto o = out.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (std::size_t dy = 0; dy < r; ++dy)
          for (std::size_t dx = 0; dx < r; ++dx) acc += x[(p * h + oy * r + dy) * w + ox * r + dx];
        o[(p * oh + oy) * ow + ox] = acc * inv;
      }
  if (detail::needs_record<T>({&x})) {
    detail::record(out, "avg_pool2d", [x, out, planes, h, w, oh, ow, r, inv]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T v = g[(p * oh + oy) * ow + ox] * inv;
            for (std::size_t dy = 0; dy < r; ++dy)
              for (std::size_t dx = 0; dx < r; ++dx) gx[(p * h + oy * r + dy) * w + ox * r + dx] += v;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------- loss

template <Scalar T>
struct CrossEntropy {
  Array<T> loss;          // scalar
  std::size_t counted{};  // non-ignored pixels
  bool all_ignored() const { return counted == 0; }
};

// Mean over non-ignored pixels of -log softmax(logits)[target]; logits are
// [B, K, H, W] and targets hold B*H*W class ids in [0, K) or ignore_index.
template <Scalar T>
CrossEntropy<T> cross_entropy_loss(const Array<T>& logits, std::span<const std::int32_t> targets,
                                   std::int32_t ignore_index = 255) {
  detail::require_rank(logits.shape(), 4, "cross_entropy_loss");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  if (targets.size() != batch * plane) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(logits.shape()));
  }
  std::size_t counted = 0;
  for (auto t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ValidationError("cross_entropy_loss: target id " + std::to_string(t) +
                            " outside [0, " + std::to_string(k) + ")");
    }
    ++counted;
  }
  std::vector<T> probs(logits.size(), T(0));
  double total = 0.0;
  auto z = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::int32_t t = targets[b * plane + p];
      if (t == ignore_index) continue;
      const std::size_t base = b * k * plane + p;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z[base + c * plane]);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const T e = std::exp(z[base + c * plane] - mx);
        probs[base + c * plane] = e;
        s += e;
      }
      for (std::size_t c = 0; c < k; ++c) probs[base + c * plane] = static_cast<T>(probs[base + c * plane] / s);
      total += -(static_cast<double>(z[base + static_cast<std::size_t>(t) * plane]) - mx - std::log(s));
    }
  }
  const double mean = counted ? total / static_cast<double>(counted) : 0.0;
  Array<T> loss = Array<T>::scalar(static_cast<T>(mean));
  if (counted && detail::needs_record<T>({&logits})) {
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    detail::record(loss, "cross_entropy",
                   [logits, loss, probs = std::move(probs), tgt = std::move(tgt), batch, k, plane,
                    counted, ignore_index]() mutable {
                     if (!loss.has_grad() || !logits.requires_grad()) return;
                     const T scale_g = loss.grad()[0] / static_cast<T>(counted);
                     auto gz = logits.grad_mut();
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t p = 0; p < plane; ++p) {
                         const std::int32_t t = tgt[b * plane + p];
                         if (t == ignore_index) continue;
                         const std::size_t base = b * k * plane + p;
                         for (std::size_t c = 0; c < k; ++c) {
                           const T onehot = static_cast<std::size_t>(t) == c ? T(1) : T(0);
                           gz[base + c * plane] += scale_g * (probs[base + c * plane] - onehot);
                         }
                       }
                   });
  }
  return {loss, counted};
}

// Per-pixel argmax over the channel axis of [B, K, H, W]; ties go to the
// lower class id.
template <Scalar T>
std::vector<std::int32_t> argmax_channels(const Array<T>& logits) {
  detail::require_rank(logits.shape(), 4, "argmax_channels");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  std::vector<std::int32_t> ids(batch * plane, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = b * k * plane + p;
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (logits[base + c * plane] > logits[base + best * plane]) best = c;
      ids[b * plane + p] = static_cast<std::int32_t>(best);
    }
  return ids;
}

}  // namespace t4t
