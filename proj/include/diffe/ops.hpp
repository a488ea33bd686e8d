#pragma once

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "diffe/tensor.hpp"

#if __has_include(<cblas-openblas.h>)
#include <cblas-openblas.h>
#define DIFFE_OPENBLAS_HEADER 1
#else
#include <cblas.h>
#endif

namespace diffe {

namespace detail {

inline void blas_init_once() {
#ifdef DIFFE_OPENBLAS_HEADER
  static const bool done = [] {
    openblas_set_num_threads(1);  // keep results bitwise deterministic
    return true;
  }();
  (void)done;
#endif
}

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

template <>
inline void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                        int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  blas_init_once();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
inline void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb, double beta, double* c,
                         int ldc) {
  blas_init_once();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Channels-by-length view; rank-2 tensors are treated as an unbatched sample.
struct BclDims {
  std::size_t batch, channels, length;
  bool batched;
};

inline BclDims bcl_dims(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, s[0], s[1], false};
  if (s.size() == 3) return {s[0], s[1], s[2], true};
  throw DimensionError(std::string(op) + ": expected [C x L] or [B x C x L] input, got " + shape_str(s));
}

template <typename T>
bool wants_grad(Tape<T>* tape) {
  (void)tape;
  return false;
}

template <typename T, typename... Rest>
bool wants_grad(Tape<T>* tape, const Tensor<T>& first, const Rest&... rest) {
  if (!tape) return false;
  return first.requires_grad() || wants_grad(tape, rest...);
}

// Fills cols[(ci*K + k) x Lo] with the padded, strided input window matrix.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t length, std::size_t kernel,
            std::size_t stride, std::size_t padding, std::size_t out_len, T* cols) {
  for (std::size_t ci = 0; ci < channels; ++ci) {
    const T* xrow = x + ci * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      T* crow = cols + (ci * kernel + k) * out_len;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(padding);
      std::size_t lo_begin = 0;
      if (off < 0) {
        lo_begin = static_cast<std::size_t>((-off + static_cast<std::ptrdiff_t>(stride) - 1) /
                                            static_cast<std::ptrdiff_t>(stride));
      }
      std::size_t lo_end = out_len;  // first lo with index >= length
      {
        const std::ptrdiff_t last_valid = static_cast<std::ptrdiff_t>(length) - 1 - off;
        if (last_valid < 0) {
          lo_end = 0;
        } else {
          lo_end = std::min<std::size_t>(out_len, static_cast<std::size_t>(last_valid) / stride + 1);
        }
      }
      if (lo_begin > lo_end) lo_begin = lo_end;
      std::fill(crow, crow + lo_begin, T(0));
      std::fill(crow + lo_end, crow + out_len, T(0));
      if (stride == 1) {
        if (lo_end > lo_begin) {
          std::memcpy(crow + lo_begin, xrow + static_cast<std::ptrdiff_t>(lo_begin) + off,
                      (lo_end - lo_begin) * sizeof(T));
        }
      } else {
        for (std::size_t lo = lo_begin; lo < lo_end; ++lo) {
          crow[lo] = xrow[static_cast<std::ptrdiff_t>(lo * stride) + off];
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* cols, std::size_t channels, std::size_t length, std::size_t kernel,
                       std::size_t stride, std::size_t padding, std::size_t out_len, T* dx) {
  for (std::size_t ci = 0; ci < channels; ++ci) {
    T* xrow = dx + ci * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      const T* crow = cols + (ci * kernel + k) * out_len;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(padding);
      for (std::size_t lo = 0; lo < out_len; ++lo) {
        const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(lo * stride) + off;
        if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(length)) {
          xrow[idx] += crow[lo];
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: cross-correlation over the last axis, zero padding, no kernel flip.
// input [C x L] or [B x C x L], weight [Co x Ci x K], bias [Co].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0, Tape<T>* tape = nullptr) {
  const auto d = detail::bcl_dims(input.shape(), "conv1d");
  if (weight.rank() != 3) {
    throw DimensionError("conv1d: weight must be [Co x Ci x K], got " + shape_str(weight.shape()));
  }
  const std::size_t co = weight.dim(0), ci = weight.dim(1), kernel = weight.dim(2);
  if (ci != d.channels) {
    throw DimensionError("conv1d: channel axis mismatch, input has " + std::to_string(d.channels) +
                         " channels but weight expects " + std::to_string(ci));
  }
  if (bias.rank() != 1 || bias.dim(0) != co) {
    throw DimensionError("conv1d: bias axis must have length " + std::to_string(co) + ", got " +
                         shape_str(bias.shape()));
  }
  if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
  if (kernel > d.length + 2 * padding) {
    throw DimensionError("conv1d: length axis too short, kernel " + std::to_string(kernel) +
                         " exceeds padded length " + std::to_string(d.length + 2 * padding));
  }
  const std::size_t lo = (d.length + 2 * padding - kernel) / stride + 1;

  Tensor<T> out(d.batched ? Shape{d.batch, co, lo} : Shape{co, lo});
  std::vector<T> cols(ci * kernel * lo);
  const std::size_t in_stride = d.channels * d.length;
  const std::size_t out_stride = co * lo;
  for (std::size_t b = 0; b < d.batch; ++b) {
    detail::im2col(input.data() + b * in_stride, d.channels, d.length, kernel, stride, padding, lo,
                   cols.data());
    detail::gemm<T>(false, false, static_cast<int>(co), static_cast<int>(lo),
                    static_cast<int>(ci * kernel), T(1), weight.data(), static_cast<int>(ci * kernel),
                    cols.data(), static_cast<int>(lo), T(0), out.data() + b * out_stride,
                    static_cast<int>(lo));
    for (std::size_t c = 0; c < co; ++c) {
      T* row = out.data() + b * out_stride + c * lo;
      const T bv = bias[c];
      for (std::size_t i = 0; i < lo; ++i) row[i] += bv;
    }
  }

  if (detail::wants_grad(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    auto on = out.node();
    tape->record(on, [xn, wn, bn, on, d, co, ci, kernel, stride, padding, lo, in_stride, out_stride]() {
      const std::vector<T>& gy = on->grad;
      std::vector<T> cols(ci * kernel * lo);
      std::vector<T> dcols;
      if (xn->requires_grad) {
        xn->ensure_grad();
        dcols.resize(ci * kernel * lo);
      }
      if (wn->requires_grad) wn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t b = 0; b < d.batch; ++b) {
        const T* gyb = gy.data() + b * out_stride;
        if (wn->requires_grad || xn->requires_grad) {
          detail::im2col(xn->value.data() + b * in_stride, d.channels, d.length, kernel, stride,
                         padding, lo, cols.data());
        }
        if (wn->requires_grad) {
          // dW += dY * cols^T
          detail::gemm<T>(false, true, static_cast<int>(co), static_cast<int>(ci * kernel),
                          static_cast<int>(lo), T(1), gyb, static_cast<int>(lo), cols.data(),
                          static_cast<int>(lo), T(1), wn->grad.data(), static_cast<int>(ci * kernel));
        }
        if (bn->requires_grad) {
          for (std::size_t c = 0; c < co; ++c) {
            T s = T(0);
            const T* row = gyb + c * lo;
            for (std::size_t i = 0; i < lo; ++i) s += row[i];
            bn->grad[c] += s;
          }
        }
        if (xn->requires_grad) {
          // dcols = W^T * dY, then scatter back onto the input layout
          detail::gemm<T>(true, false, static_cast<int>(ci * kernel), static_cast<int>(lo),
                          static_cast<int>(co), T(1), wn->value.data(), static_cast<int>(ci * kernel),
                          gyb, static_cast<int>(lo), T(0), dcols.data(), static_cast<int>(lo));
          detail::col2im_accumulate(dcols.data(), d.channels, d.length, kernel, stride, padding, lo,
                                    xn->grad.data() + b * in_stride);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// group_norm over [C x L] / [B x C x L]: per (sample, group) standardization,
// then per-channel scale and shift.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5), Tape<T>* tape = nullptr) {
  const auto d = detail::bcl_dims(input.shape(), "group_norm");
  if (groups == 0 || d.channels % groups != 0) {
    throw ConfigError("group_norm: channel count " + std::to_string(d.channels) +
                      " is not divisible by groups " + std::to_string(groups));
  }
  if (eps <= T(0)) throw ConfigError("group_norm: eps must be positive");
  if (gamma.size() != d.channels || beta.size() != d.channels) {
    throw DimensionError("group_norm: gamma/beta must have one entry per channel");
  }
  const std::size_t cg = d.channels / groups;
  const std::size_t group_elems = cg * d.length;
  const std::size_t sample_stride = d.channels * d.length;

  Tensor<T> out(input.shape());
  std::vector<T> mean(d.batch * groups), inv_std(d.batch * groups);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const T* xs = input.data() + b * sample_stride + g * cg * d.length;
      double mu = 0.0;
      for (std::size_t i = 0; i < group_elems; ++i) mu += static_cast<double>(xs[i]);
      mu /= static_cast<double>(group_elems);
      double var = 0.0;
      for (std::size_t i = 0; i < group_elems; ++i) {
        const double e = static_cast<double>(xs[i]) - mu;
        var += e * e;
      }
      var /= static_cast<double>(group_elems);
      const T m = static_cast<T>(mu);
      const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      mean[b * groups + g] = m;
      inv_std[b * groups + g] = is;
      T* ys = out.data() + b * sample_stride + g * cg * d.length;
      for (std::size_t c = 0; c < cg; ++c) {
        const T ga = gamma[g * cg + c];
        const T be = beta[g * cg + c];
        const T* xr = xs + c * d.length;
        T* yr = ys + c * d.length;
        for (std::size_t l = 0; l < d.length; ++l) {
          yr[l] = ga * ((xr[l] - m) * is) + be;
        }
      }
    }
  }

  if (detail::wants_grad(tape, input, gamma, beta)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto on = out.node();
    tape->record(on, [xn, gn, bn, on, d, groups, cg, group_elems, sample_stride, mean, inv_std]() {
      const std::vector<T>& gy = on->grad;
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      const double n = static_cast<double>(group_elems);
      for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t g = 0; g < groups; ++g) {
          const T m = mean[b * groups + g];
          const T is = inv_std[b * groups + g];
          const T* xs = xn->value.data() + b * sample_stride + g * cg * d.length;
          const T* gys = gy.data() + b * sample_stride + g * cg * d.length;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < cg; ++c) {
            const T ga = gn->value[g * cg + c];
            const T* xr = xs + c * d.length;
            const T* gr = gys + c * d.length;
            for (std::size_t l = 0; l < d.length; ++l) {
              const double dxh = static_cast<double>(gr[l]) * static_cast<double>(ga);
              const double xh = static_cast<double>((xr[l] - m) * is);
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xh;
            }
          }
          const double m1 = sum_dxhat / n;
          const double m2 = sum_dxhat_xhat / n;
          for (std::size_t c = 0; c < cg; ++c) {
            const std::size_t ch = g * cg + c;
            const T ga = gn->value[ch];
            const T* xr = xs + c * d.length;
            const T* gr = gys + c * d.length;
            if (xn->requires_grad) {
              T* dxr = xn->grad.data() + b * sample_stride + ch * d.length;
              for (std::size_t l = 0; l < d.length; ++l) {
                const double xh = static_cast<double>((xr[l] - m) * is);
                const double dxh = static_cast<double>(gr[l]) * static_cast<double>(ga);
                dxr[l] += static_cast<T>(static_cast<double>(is) * (dxh - m1 - xh * m2));
              }
            }
            if (gn->requires_grad || bn->requires_grad) {
              double dg = 0.0, db = 0.0;
              for (std::size_t l = 0; l < d.length; ++l) {
                const double xh = static_cast<double>((xr[l] - m) * is);
                dg += static_cast<double>(gr[l]) * xh;
                db += static_cast<double>(gr[l]);
              }
              if (gn->requires_grad) gn->grad[ch] += static_cast<T>(dg);
              if (bn->requires_grad) bn->grad[ch] += static_cast<T>(db);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elu, elementwise: x for x > 0, a*(exp(x)-1) otherwise.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> elu(const Tensor<T>& input, T a = T(1), Tape<T>* tape = nullptr) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = x[i] > T(0) ? x[i] : a * static_cast<T>(std::expm1(static_cast<double>(x[i])));
  }
  if (detail::wants_grad(tape, input)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto on = out.node();
    tape->record(on, [xn, on, a, n]() {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const std::vector<T>& gy = on->grad;
      for (std::size_t i = 0; i < n; ++i) {
        const T slope = xn->value[i] > T(0) ? T(1) : on->value[i] + a;
        xn->grad[i] += gy[i] * slope;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// affine: weight * input + bias. input [N] or [B x N], weight [M x N].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Tape<T>* tape = nullptr) {
  if (weight.rank() != 2) {
    throw DimensionError("affine: weight must be [M x N], got " + shape_str(weight.shape()));
  }
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  const bool batched = input.rank() == 2;
  if (!batched && input.rank() != 1) {
    throw DimensionError("affine: input must be [N] or [B x N], got " + shape_str(input.shape()));
  }
  const std::size_t batch = batched ? input.dim(0) : 1;
  const std::size_t in_n = batched ? input.dim(1) : input.dim(0);
  if (in_n != n) {
    throw DimensionError("affine: inner dimension mismatch, input width " + std::to_string(in_n) +
                         " vs weight width " + std::to_string(n));
  }
  if (bias.rank() != 1 || bias.dim(0) != m) {
    throw DimensionError("affine: bias must have length " + std::to_string(m));
  }

  Tensor<T> out(batched ? Shape{batch, m} : Shape{m});
  detail::gemm<T>(false, true, static_cast<int>(batch), static_cast<int>(m), static_cast<int>(n), T(1),
                  input.data(), static_cast<int>(n), weight.data(), static_cast<int>(n), T(0),
                  out.data(), static_cast<int>(m));
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = out.data() + b * m;
    for (std::size_t j = 0; j < m; ++j) row[j] += bias[j];
  }

  if (detail::wants_grad(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto wn = weight.node();
    auto bn = bias.node();
    auto on = out.node();
    tape->record(on, [xn, wn, bn, on, batch, m, n]() {
      const std::vector<T>& gy = on->grad;
      if (xn->requires_grad) {
        xn->ensure_grad();
        detail::gemm<T>(false, false, static_cast<int>(batch), static_cast<int>(n),
                        static_cast<int>(m), T(1), gy.data(), static_cast<int>(m), wn->value.data(),
                        static_cast<int>(n), T(1), xn->grad.data(), static_cast<int>(n));
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        detail::gemm<T>(true, false, static_cast<int>(m), static_cast<int>(n),
                        static_cast<int>(batch), T(1), gy.data(), static_cast<int>(m),
                        xn->value.data(), static_cast<int>(n), T(1), wn->grad.data(),
                        static_cast<int>(n));
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < m; ++j) bn->grad[j] += gy[b * m + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// adaptive_avg_pool: bin i averages input slice
// [floor(i*L/O), ceil((i+1)*L/O)). Bins can overlap when O does not divide L.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& input, std::size_t target_len, Tape<T>* tape = nullptr) {
  const auto d = detail::bcl_dims(input.shape(), "adaptive_avg_pool");
  if (target_len < 1) throw ConfigError("adaptive_avg_pool: target_len must be >= 1");
  if (target_len > d.length) {
    throw ConfigError("adaptive_avg_pool: target_len " + std::to_string(target_len) +
                      " exceeds input length " + std::to_string(d.length));
  }
  Tensor<T> out(d.batched ? Shape{d.batch, d.channels, target_len} : Shape{d.channels, target_len});
  const std::size_t rows = d.batch * d.channels;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = input.data() + r * d.length;
    T* y = out.data() + r * target_len;
    for (std::size_t i = 0; i < target_len; ++i) {
      const std::size_t b0 = (i * d.length) / target_len;
      const std::size_t b1 = ((i + 1) * d.length + target_len - 1) / target_len;
      double s = 0.0;
      for (std::size_t j = b0; j < b1; ++j) s += static_cast<double>(x[j]);
      y[i] = static_cast<T>(s / static_cast<double>(b1 - b0));
    }
  }
  if (detail::wants_grad(tape, input)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto on = out.node();
    const std::size_t len = d.length;
    tape->record(on, [xn, on, rows, len, target_len]() {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gy = on->grad.data() + r * target_len;
        T* gx = xn->grad.data() + r * len;
        for (std::size_t i = 0; i < target_len; ++i) {
          const std::size_t b0 = (i * len) / target_len;
          const std::size_t b1 = ((i + 1) * len + target_len - 1) / target_len;
          const T w = gy[i] / static_cast<T>(b1 - b0);
          for (std::size_t j = b0; j < b1; ++j) gx[j] += w;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// upsample_nearest2: repeat every time sample twice.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  const auto d = detail::bcl_dims(input.shape(), "upsample_nearest2");
  Tensor<T> out(d.batched ? Shape{d.batch, d.channels, 2 * d.length}
                          : Shape{d.channels, 2 * d.length});
  const std::size_t rows = d.batch * d.channels;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = input.data() + r * d.length;
    T* y = out.data() + r * 2 * d.length;
    for (std::size_t l = 0; l < d.length; ++l) {
      y[2 * l] = x[l];
      y[2 * l + 1] = x[l];
    }
  }
  if (detail::wants_grad(tape, input)) {
    out.set_requires_grad(true);
    auto xn = input.node();
    auto on = out.node();
    const std::size_t len = d.length;
    tape->record(on, [xn, on, rows, len]() {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gy = on->grad.data() + r * 2 * len;
        T* gx = xn->grad.data() + r * len;
        for (std::size_t l = 0; l < len; ++l) gx[l] += gy[2 * l] + gy[2 * l + 1];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_channels: concatenate along the channel axis.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw UsageError("concat_channels: no inputs");
  const auto d0 = detail::bcl_dims(parts[0].shape(), "concat_channels");
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    const auto d = detail::bcl_dims(p.shape(), "concat_channels");
    if (d.batch != d0.batch || d.length != d0.length || d.batched != d0.batched) {
      throw DimensionError("concat_channels: batch/length axes must agree, got " +
                           shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    }
    total_c += d.channels;
  }
  Tensor<T> out(d0.batched ? Shape{d0.batch, total_c, d0.length} : Shape{total_c, d0.length});
  for (std::size_t b = 0; b < d0.batch; ++b) {
    std::size_t c_off = 0;
    for (const auto& p : parts) {
      const std::size_t pc = detail::bcl_dims(p.shape(), "concat_channels").channels;
      std::memcpy(out.data() + (b * total_c + c_off) * d0.length,
                  p.data() + b * pc * d0.length, pc * d0.length * sizeof(T));
      c_off += pc;
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(detail::bcl_dims(p.shape(), "concat_channels").channels);
    }
    auto on = out.node();
    const std::size_t batch = d0.batch, len = d0.length;
    tape->record(on, [nodes, widths, on, batch, len, total_c]() {
      for (std::size_t b = 0; b < batch; ++b) {
        std::size_t c_off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]->requires_grad) {
            nodes[i]->ensure_grad();
            const T* gy = on->grad.data() + (b * total_c + c_off) * len;
            T* gx = nodes[i]->grad.data() + b * widths[i] * len;
            for (std::size_t j = 0; j < widths[i] * len; ++j) gx[j] += gy[j];
          }
          c_off += widths[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add / mul_scalar / add_channel_bias / reshape
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (detail::wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    tape->record(on, [an, bn, on, n]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s, Tape<T>* tape = nullptr) {
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  if (detail::wants_grad(tape, a)) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape->record(on, [an, on, s, n]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * s;
    });
  }
  return out;
}

// x [B x C x L] + v [B x C] broadcast over L (or [C x L] + [C]).
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& v, Tape<T>* tape = nullptr) {
  const auto d = detail::bcl_dims(x.shape(), "add_channel_bias");
  const bool ok = d.batched ? (v.rank() == 2 && v.dim(0) == d.batch && v.dim(1) == d.channels)
                            : (v.rank() == 1 && v.dim(0) == d.channels);
  if (!ok) {
    throw DimensionError("add_channel_bias: bias shape " + shape_str(v.shape()) +
                         " does not broadcast over " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const T bias = v[b * d.channels + c];
      const T* xr = x.data() + (b * d.channels + c) * d.length;
      T* yr = out.data() + (b * d.channels + c) * d.length;
      for (std::size_t l = 0; l < d.length; ++l) yr[l] = xr[l] + bias;
    }
  }
  if (detail::wants_grad(tape, x, v)) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto vn = v.node();
    auto on = out.node();
    tape->record(on, [xn, vn, on, d]() {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t b = 0; b < d.batch; ++b) {
          for (std::size_t c = 0; c < d.channels; ++c) {
            const T* gy = on->grad.data() + (b * d.channels + c) * d.length;
            T s = T(0);
            for (std::size_t l = 0; l < d.length; ++l) s += gy[l];
            vn->grad[b * d.channels + c] += s;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape, Tape<T>* tape = nullptr) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
  }
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.values());
  if (detail::wants_grad(tape, x)) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tape->record(on, [xn, on]() {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------
enum class Reduce { Mean, None };

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target, Reduce reduce = Reduce::Mean,
                  Tape<T>* tape = nullptr) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const std::size_t n = pred.size();
  Tensor<T> out;
  if (reduce == Reduce::None) {
    out = Tensor<T>(pred.shape());
    for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(pred[i] - target[i]);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(pred[i] - target[i]));
    out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  }
  if (detail::wants_grad(tape, pred, target)) {
    out.set_requires_grad(true);
    auto pn = pred.node();
    auto tn = target.node();
    auto on = out.node();
    tape->record(on, [pn, tn, on, n, reduce]() {
      const bool mean = reduce == Reduce::Mean;
      const T scale = mean ? T(1) / static_cast<T>(n) : T(1);
      if (pn->requires_grad) pn->ensure_grad();
      if (tn->requires_grad) tn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pn->value[i] - tn->value[i];
        const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        const T g = (mean ? on->grad[0] : on->grad[i]) * sgn * scale;
        if (pn->requires_grad) pn->grad[i] += g;
        if (tn->requires_grad) tn->grad[i] -= g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const std::size_t n = pred.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  if (detail::wants_grad(tape, pred, target)) {
    out.set_requires_grad(true);
    auto pn = pred.node();
    auto tn = target.node();
    auto on = out.node();
    tape->record(on, [pn, tn, on, n]() {
      const T scale = T(2) / static_cast<T>(n);
      if (pn->requires_grad) pn->ensure_grad();
      if (tn->requires_grad) tn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T g = on->grad[0] * scale * (pn->value[i] - tn->value[i]);
        if (pn->requires_grad) pn->grad[i] += g;
        if (tn->requires_grad) tn->grad[i] -= g;
      }
    });
  }
  return out;
}

}  // namespace diffe
