#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define GRRNN_SIMD_AVX2 1
#endif

#include "grrnn/tensor.hpp"

namespace grrnn::ops {

namespace detail {

#ifdef GRRNN_SIMD_AVX2
// 256-bit vector shims; the convolution kernels keep their accumulator tiles
// in registers explicitly because the autovectorizer spills this pattern.
template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using R = __m256;
  static constexpr std::size_t lanes = 8;
  static R load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, R v) { _mm256_storeu_ps(p, v); }
  static R set1(float v) { return _mm256_set1_ps(v); }
  static R zero() { return _mm256_setzero_ps(); }
  static R fma(R a, R b, R c) { return _mm256_fmadd_ps(a, b, c); }
  static R add(R a, R b) { return _mm256_add_ps(a, b); }
};

template <>
struct Vec<double> {
  using R = __m256d;
  static constexpr std::size_t lanes = 4;
  static R load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, R v) { _mm256_storeu_pd(p, v); }
  static R set1(double v) { return _mm256_set1_pd(v); }
  static R zero() { return _mm256_setzero_pd(); }
  static R fma(R a, R b, R c) { return _mm256_fmadd_pd(a, b, c); }
  static R add(R a, R b) { return _mm256_add_pd(a, b); }
};
#endif

inline void check_axis(bool ok, const char* op, const char* axis, std::size_t got,
                       std::size_t want) {
  if (!ok)
    throw ShapeError(std::string(op) + ": " + axis + " axis is " + std::to_string(got) +
                     ", expected " + std::to_string(want));
}

/// Feature-map view: rank 3 is one sample (h,w,c), rank 4 is (n,h,w,c).
struct MapDims {
  std::size_t n, h, w, c;
  bool batched;
};

inline MapDims map_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected a rank-3 (h,w,c) or rank-4 (n,h,w,c) tensor, got " +
                   shape_str(s));
}

/// Copy one (h,w,c) image into a zero-padded (h+2,w+2,c) buffer.
template <typename T>
void pad1_image(const T* x, std::size_t h, std::size_t w, std::size_t c, T* xp) {
  const std::size_t wp = w + 2;
  std::fill(xp, xp + wp * c, T(0));
  std::fill(xp + (h + 1) * wp * c, xp + (h + 2) * wp * c, T(0));
  for (std::size_t y = 0; y < h; ++y) {
    T* row = xp + ((y + 1) * wp) * c;
    std::fill(row, row + c, T(0));
    std::copy(x + y * w * c, x + (y + 1) * w * c, row + c);
    std::fill(row + (w + 1) * c, row + wp * c, T(0));
  }
}

/// 3x3 same-size convolution of one padded image.
/// xp: (h+2, w+2, ci) zero-padded input; wgt: (3,3,ci,co); out: (h,w,co).
/// Register-tiled over 4 pixels x CT output channels; `Accumulate` selects
/// store-vs-add so the same kernel serves the input-gradient pass.
template <typename T, bool Accumulate>
void conv3x3_image(const T* __restrict xp, std::size_t h, std::size_t w, std::size_t ci,
                   const T* __restrict wgt, const T* __restrict bias, T* __restrict out,
                   std::size_t co) {
  constexpr std::size_t CT = sizeof(T) == 4 ? 16 : 8;
  constexpr std::size_t XB = 4;
  const std::size_t wp = w + 2;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t o0 = 0; o0 < co; o0 += CT) {
      const std::size_t ob = std::min(CT, co - o0);
      for (std::size_t x0 = 0; x0 < w; x0 += XB) {
        const std::size_t xb = std::min(XB, w - x0);
        if (ob == CT && xb == XB) {
#ifdef GRRNN_SIMD_AVX2
          using V = Vec<T>;
          using R = typename V::R;
          constexpr std::size_t L = V::lanes;
          R blo = bias ? V::load(bias + o0) : V::zero();
          R bhi = bias ? V::load(bias + o0 + L) : V::zero();
          R a00 = blo, a01 = bhi, a10 = blo, a11 = bhi;
          R a20 = blo, a21 = bhi, a30 = blo, a31 = bhi;
          for (std::size_t k = 0; k < 9; ++k) {
            const std::size_t ky = k / 3, kx = k % 3;
            const T* __restrict xrow = xp + ((y + ky) * wp + (x0 + kx)) * ci;
            const T* __restrict wrow = wgt + k * ci * co + o0;
            for (std::size_t i = 0; i < ci; ++i) {
              const R w0 = V::load(wrow + i * co);
              const R w1 = V::load(wrow + i * co + L);
              const R s0 = V::set1(xrow[i]);
              a00 = V::fma(s0, w0, a00);
              a01 = V::fma(s0, w1, a01);
              const R s1 = V::set1(xrow[ci + i]);
              a10 = V::fma(s1, w0, a10);
              a11 = V::fma(s1, w1, a11);
              const R s2 = V::set1(xrow[2 * ci + i]);
              a20 = V::fma(s2, w0, a20);
              a21 = V::fma(s2, w1, a21);
              const R s3 = V::set1(xrow[3 * ci + i]);
              a30 = V::fma(s3, w0, a30);
              a31 = V::fma(s3, w1, a31);
            }
          }
          R acc[4][2] = {{a00, a01}, {a10, a11}, {a20, a21}, {a30, a31}};
          for (std::size_t p = 0; p < XB; ++p) {
            T* __restrict op = out + (y * w + x0 + p) * co + o0;
            if (Accumulate) {
              V::store(op, V::add(V::load(op), acc[p][0]));
              V::store(op + L, V::add(V::load(op + L), acc[p][1]));
            } else {
              V::store(op, acc[p][0]);
              V::store(op + L, acc[p][1]);
            }
          }
#else
          T acc[XB][CT];
          for (std::size_t p = 0; p < XB; ++p)
            for (std::size_t t = 0; t < CT; ++t) acc[p][t] = bias ? bias[o0 + t] : T(0);
          for (std::size_t k = 0; k < 9; ++k) {
            const std::size_t ky = k / 3, kx = k % 3;
            const T* __restrict xrow = xp + ((y + ky) * wp + (x0 + kx)) * ci;
            const T* __restrict wrow = wgt + k * ci * co + o0;
            for (std::size_t i = 0; i < ci; ++i) {
              const T s0 = xrow[i];
              const T s1 = xrow[ci + i];
              const T s2 = xrow[2 * ci + i];
              const T s3 = xrow[3 * ci + i];
              const T* __restrict wv = wrow + i * co;
              for (std::size_t t = 0; t < CT; ++t) {
                acc[0][t] += s0 * wv[t];
                acc[1][t] += s1 * wv[t];
                acc[2][t] += s2 * wv[t];
                acc[3][t] += s3 * wv[t];
              }
            }
          }
          for (std::size_t p = 0; p < XB; ++p) {
            T* __restrict op = out + (y * w + x0 + p) * co + o0;
            for (std::size_t t = 0; t < CT; ++t)
              op[t] = Accumulate ? op[t] + acc[p][t] : acc[p][t];
          }
#endif
        } else {
          T acc[XB][CT];
          for (std::size_t p = 0; p < xb; ++p)
            for (std::size_t t = 0; t < ob; ++t) acc[p][t] = bias ? bias[o0 + t] : T(0);
          for (std::size_t k = 0; k < 9; ++k) {
            const std::size_t ky = k / 3, kx = k % 3;
            const T* __restrict xrow = xp + ((y + ky) * wp + (x0 + kx)) * ci;
            const T* __restrict wrow = wgt + k * ci * co + o0;
            for (std::size_t i = 0; i < ci; ++i) {
              const T* __restrict wv = wrow + i * co;
              for (std::size_t p = 0; p < xb; ++p) {
                const T s = xrow[p * ci + i];
                for (std::size_t t = 0; t < ob; ++t) acc[p][t] += s * wv[t];
              }
            }
          }
          for (std::size_t p = 0; p < xb; ++p) {
            T* __restrict op = out + (y * w + x0 + p) * co + o0;
            for (std::size_t t = 0; t < ob; ++t)
              op[t] = Accumulate ? op[t] + acc[p][t] : acc[p][t];
          }
        }
      }
    }
  }
}

/// Weight gradient of one image: dw[k][i][o] += sum_{y,x} xp[y+ky][x+kx][i] * dout[y][x][o].
template <typename T>
void conv3x3_dw_image(const T* __restrict xp, std::size_t h, std::size_t w, std::size_t ci,
                      const T* __restrict dout, std::size_t co, T* __restrict dw) {
  constexpr std::size_t CT = sizeof(T) == 4 ? 16 : 8;
  constexpr std::size_t IB = 4;
  const std::size_t wp = w + 2;
  for (std::size_t k = 0; k < 9; ++k) {
    const std::size_t ky = k / 3, kx = k % 3;
    for (std::size_t i0 = 0; i0 < ci; i0 += IB) {
      const std::size_t ib = std::min(IB, ci - i0);
      for (std::size_t o0 = 0; o0 < co; o0 += CT) {
        const std::size_t ob = std::min(CT, co - o0);
        if (ib == IB && ob == CT) {
#ifdef GRRNN_SIMD_AVX2
          using V = Vec<T>;
          using R = typename V::R;
          constexpr std::size_t L = V::lanes;
          R a00 = V::zero(), a01 = V::zero(), a10 = V::zero(), a11 = V::zero();
          R a20 = V::zero(), a21 = V::zero(), a30 = V::zero(), a31 = V::zero();
          for (std::size_t y = 0; y < h; ++y) {
            const T* __restrict xrow = xp + ((y + ky) * wp + kx) * ci + i0;
            const T* __restrict drow = dout + (y * w) * co + o0;
            for (std::size_t x = 0; x < w; ++x) {
              const R d0 = V::load(drow + x * co);
              const R d1 = V::load(drow + x * co + L);
              const R s0 = V::set1(xrow[x * ci]);
              a00 = V::fma(s0, d0, a00);
              a01 = V::fma(s0, d1, a01);
              const R s1 = V::set1(xrow[x * ci + 1]);
              a10 = V::fma(s1, d0, a10);
              a11 = V::fma(s1, d1, a11);
              const R s2 = V::set1(xrow[x * ci + 2]);
              a20 = V::fma(s2, d0, a20);
              a21 = V::fma(s2, d1, a21);
              const R s3 = V::set1(xrow[x * ci + 3]);
              a30 = V::fma(s3, d0, a30);
              a31 = V::fma(s3, d1, a31);
            }
          }
          R acc[4][2] = {{a00, a01}, {a10, a11}, {a20, a21}, {a30, a31}};
          for (std::size_t p = 0; p < IB; ++p) {
            T* __restrict dwp = dw + (k * ci + i0 + p) * co + o0;
            V::store(dwp, V::add(V::load(dwp), acc[p][0]));
            V::store(dwp + L, V::add(V::load(dwp + L), acc[p][1]));
          }
#else
          T acc[IB][CT] = {};
          for (std::size_t y = 0; y < h; ++y) {
            const T* __restrict xrow = xp + ((y + ky) * wp + kx) * ci + i0;
            const T* __restrict drow = dout + (y * w) * co + o0;
            for (std::size_t x = 0; x < w; ++x) {
              const T s0 = xrow[x * ci];
              const T s1 = xrow[x * ci + 1];
              const T s2 = xrow[x * ci + 2];
              const T s3 = xrow[x * ci + 3];
              const T* __restrict dv = drow + x * co;
              for (std::size_t t = 0; t < CT; ++t) {
                acc[0][t] += s0 * dv[t];
                acc[1][t] += s1 * dv[t];
                acc[2][t] += s2 * dv[t];
                acc[3][t] += s3 * dv[t];
              }
            }
          }
          for (std::size_t p = 0; p < IB; ++p) {
            T* __restrict dwp = dw + (k * ci + i0 + p) * co + o0;
            for (std::size_t t = 0; t < CT; ++t) dwp[t] += acc[p][t];
          }
#endif
        } else {
          T acc[IB][CT] = {};
          for (std::size_t y = 0; y < h; ++y) {
            const T* __restrict xrow = xp + ((y + ky) * wp + kx) * ci + i0;
            const T* __restrict drow = dout + (y * w) * co + o0;
            for (std::size_t x = 0; x < w; ++x) {
              const T* __restrict dv = drow + x * co;
              for (std::size_t p = 0; p < ib; ++p) {
                const T s = xrow[x * ci + p];
                for (std::size_t t = 0; t < ob; ++t) acc[p][t] += s * dv[t];
              }
            }
          }
          for (std::size_t p = 0; p < ib; ++p) {
            T* __restrict dwp = dw + (k * ci + i0 + p) * co + o0;
            for (std::size_t t = 0; t < ob; ++t) dwp[t] += acc[p][t];
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

/// 3x3 convolution, stride 1, zero padding 1: spatial size is preserved.
/// x: (h,w,ci) or (n,h,w,ci); weight: (3,3,ci,co); bias: (co).
template <typename T>
Tensor<T> conv3x3(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight,
                  const Tensor<T>& bias) {
  const auto d = detail::map_dims(x.shape(), "conv3x3");
  if (d.h < 1 || d.w < 1) throw ShapeError("conv3x3: spatial axes must be >= 1");
  if (weight.rank() != 4)
    throw ShapeError("conv3x3: weight must be rank-4 (3,3,ci,co), got " +
                     shape_str(weight.shape()));
  detail::check_axis(weight.dim(0) == 3, "conv3x3", "weight kernel-height", weight.dim(0), 3);
  detail::check_axis(weight.dim(1) == 3, "conv3x3", "weight kernel-width", weight.dim(1), 3);
  detail::check_axis(weight.dim(2) == d.c, "conv3x3", "weight input-channel", weight.dim(2), d.c);
  const std::size_t co = weight.dim(3);
  detail::check_axis(bias.rank() == 1 && bias.dim(0) == co, "conv3x3", "bias channel",
                     bias.rank() == 1 ? bias.dim(0) : 0, co);

  Shape out_shape = d.batched ? Shape{d.n, d.h, d.w, co} : Shape{d.h, d.w, co};
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));

  const std::size_t img_in = d.h * d.w * d.c;
  const std::size_t img_out = d.h * d.w * co;
  std::vector<T> pad((d.h + 2) * (d.w + 2) * d.c);
  for (std::size_t im = 0; im < d.n; ++im) {
    detail::pad1_image(x.data() + im * img_in, d.h, d.w, d.c, pad.data());
    detail::conv3x3_image<T, false>(pad.data(), d.h, d.w, d.c, weight.data(), bias.data(),
                                    out.data() + im * img_out, co);
  }

  if (tape && (x.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = weight, bc = bias, oc = out;
    tape->record([xc, wc, bc, oc, d, co]() mutable {
      const std::size_t img_in = d.h * d.w * d.c;
      const std::size_t img_out = d.h * d.w * co;
      if (bc.requires_grad()) {
        T* db = bc.grad_data();
        const T* og = oc.grad_data();
        for (std::size_t p = 0; p < d.n * d.h * d.w; ++p)
          for (std::size_t o = 0; o < co; ++o) db[o] += og[p * co + o];
      }
      if (wc.requires_grad()) {
        std::vector<T> pad((d.h + 2) * (d.w + 2) * d.c);
        for (std::size_t im = 0; im < d.n; ++im) {
          detail::pad1_image(xc.data() + im * img_in, d.h, d.w, d.c, pad.data());
          detail::conv3x3_dw_image(pad.data(), d.h, d.w, d.c, oc.grad_data() + im * img_out, co,
                                   wc.grad_data());
        }
      }
      if (xc.requires_grad()) {
        // dx = conv3x3(dout, wT) with the kernel flipped and channel axes swapped.
        std::vector<T> wt(9 * co * d.c);
        const T* wv = wc.data();
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx)
            for (std::size_t i = 0; i < d.c; ++i)
              for (std::size_t o = 0; o < co; ++o)
                wt[(((ky * 3 + kx) * co) + o) * d.c + i] =
                    wv[(((2 - ky) * 3 + (2 - kx)) * d.c + i) * co + o];
        std::vector<T> pad((d.h + 2) * (d.w + 2) * co);
        for (std::size_t im = 0; im < d.n; ++im) {
          detail::pad1_image(oc.grad_data() + im * img_out, d.h, d.w, co, pad.data());
          detail::conv3x3_image<T, true>(pad.data(), d.h, d.w, co, wt.data(), nullptr,
                                         xc.grad_data() + im * img_in, d.c);
        }
      }
    });
  }
  return out;
}

/// 2x2 max pooling with stride 2. Gradient is routed to the window argmax;
/// ties go to the first element in row-major window order.
template <typename T>
Tensor<T> maxpool2x2(Tape<T>* tape, const Tensor<T>& x) {
  const auto d = detail::map_dims(x.shape(), "maxpool2x2");
  if (d.h % 2 != 0)
    throw ShapeError("maxpool2x2: height axis is " + std::to_string(d.h) + ", expected even");
  if (d.w % 2 != 0)
    throw ShapeError("maxpool2x2: width axis is " + std::to_string(d.w) + ", expected even");
  const std::size_t oh = d.h / 2, ow = d.w / 2;

  Shape out_shape = d.batched ? Shape{d.n, oh, ow, d.c} : Shape{oh, ow, d.c};
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
  std::vector<std::uint32_t> argmax(out.numel());

  const T* xv = x.data();
  T* ov = out.data();
  const std::size_t img_in = d.h * d.w * d.c;
  const std::size_t img_out = oh * ow * d.c;
  for (std::size_t im = 0; im < d.n; ++im) {
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t base = im * img_in + (2 * y * d.w + 2 * xx) * d.c + c;
          std::size_t best = base;
          T bv = xv[base];
          const std::size_t cand[3] = {base + d.c, base + d.w * d.c, base + d.w * d.c + d.c};
          for (const std::size_t idx : cand)
            if (xv[idx] > bv) {
              bv = xv[idx];
              best = idx;
            }
          const std::size_t oi = im * img_out + (y * ow + xx) * d.c + c;
          ov[oi] = bv;
          argmax[oi] = static_cast<std::uint32_t>(best - im * img_in);
        }
  }

  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc, argmax = std::move(argmax), img_in, img_out, n = d.n]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      for (std::size_t im = 0; im < n; ++im)
        for (std::size_t i = 0; i < img_out; ++i)
          xg[im * img_in + argmax[im * img_out + i]] += og[im * img_out + i];
    });
  }
  return out;
}

/// Batch normalization over the batch and spatial axes of (n,h,w,c) input.
/// Train mode uses batch statistics (epsilon 1e-5) and updates the running
/// buffers with momentum 0.1 (unbiased variance, framework convention);
/// eval mode normalizes with the running buffers.
template <typename T>
Tensor<T> batchnorm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, std::vector<T>& running_mean,
                    std::vector<T>& running_var, bool train, T eps = T(1e-5),
                    T momentum = T(0.1)) {
  const auto d = detail::map_dims(x.shape(), "batchnorm");
  detail::check_axis(gamma.rank() == 1 && gamma.dim(0) == d.c, "batchnorm", "gamma channel",
                     gamma.rank() == 1 ? gamma.dim(0) : 0, d.c);
  detail::check_axis(beta.rank() == 1 && beta.dim(0) == d.c, "batchnorm", "beta channel",
                     beta.rank() == 1 ? beta.dim(0) : 0, d.c);
  if (running_mean.size() != d.c || running_var.size() != d.c)
    throw ShapeError("batchnorm: running statistics size does not match channel axis");
  const std::size_t m = d.n * d.h * d.w;
  if (train && m < 2)
    throw ValueError("batchnorm: train mode needs at least 2 elements per channel, got " +
                     std::to_string(m));

  std::vector<T> mean(d.c, T(0)), invstd(d.c);
  const T* xv = x.data();
  if (train) {
    std::vector<T> var(d.c, T(0));
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t c = 0; c < d.c; ++c) mean[c] += xv[p * d.c + c];
    for (std::size_t c = 0; c < d.c; ++c) mean[c] /= static_cast<T>(m);
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t c = 0; c < d.c; ++c) {
        const T dv = xv[p * d.c + c] - mean[c];
        var[c] += dv * dv;
      }
    for (std::size_t c = 0; c < d.c; ++c) {
      var[c] /= static_cast<T>(m);
      invstd[c] = T(1) / std::sqrt(var[c] + eps);
    }
    const T unbias = static_cast<T>(m) / static_cast<T>(m - 1);
    for (std::size_t c = 0; c < d.c; ++c) {
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean[c];
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* ov = out.data();
  const T* g = gamma.data();
  const T* b = beta.data();
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t c = 0; c < d.c; ++c)
      ov[p * d.c + c] = g[c] * (xv[p * d.c + c] - mean[c]) * invstd[c] + b[c];

  if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
    tape->record([xc, gc, bc, oc, mean = std::move(mean), invstd = std::move(invstd), m,
                  c = d.c, train]() mutable {
      const T* xv = xc.data();
      const T* og = oc.grad_data();
      const T* g = gc.data();
      std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
      for (std::size_t p = 0; p < m; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T dy = og[p * c + ch];
          sum_dy[ch] += dy;
          sum_dy_xhat[ch] += dy * (xv[p * c + ch] - mean[ch]) * invstd[ch];
        }
      if (gc.requires_grad()) {
        T* dg = gc.grad_data();
        for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
      }
      if (bc.requires_grad()) {
        T* db = bc.grad_data();
        for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_dy[ch];
      }
      if (xc.requires_grad()) {
        T* xg = xc.grad_data();
        if (train) {
          // dx = (gamma*invstd/m) * (m*dy - sum(dy) - xhat*sum(dy*xhat))
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t p = 0; p < m; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T xhat = (xv[p * c + ch] - mean[ch]) * invstd[ch];
              xg[p * c + ch] += g[ch] * invstd[ch] * inv_m *
                                (static_cast<T>(m) * og[p * c + ch] - sum_dy[ch] -
                                 xhat * sum_dy_xhat[ch]);
            }
        } else {
          for (std::size_t p = 0; p < m; ++p)
            for (std::size_t ch = 0; ch < c; ++ch)
              xg[p * c + ch] += og[p * c + ch] * g[ch] * invstd[ch];
        }
      }
    });
  }
  return out;
}

/// y = x @ w (+ bias). x: (n,i) or (i); w: (i,o); bias: (o) or undefined.
template <typename T>
Tensor<T> linear_impl(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& bias, const char* op) {
  const bool batched = x.rank() == 2;
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError(std::string(op) + ": input must be rank-1 or rank-2, got " +
                     shape_str(x.shape()));
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t in = batched ? x.dim(1) : x.dim(0);
  if (w.rank() != 2)
    throw ShapeError(std::string(op) + ": weight must be rank-2, got " + shape_str(w.shape()));
  detail::check_axis(w.dim(0) == in, op, "weight input", w.dim(0), in);
  const std::size_t out_dim = w.dim(1);
  if (bias.defined())
    detail::check_axis(bias.rank() == 1 && bias.dim(0) == out_dim, op, "bias",
                       bias.rank() == 1 ? bias.dim(0) : 0, out_dim);

  Tensor<T> out = Tensor<T>::zeros(batched ? Shape{n, out_dim} : Shape{out_dim});
  const T* xv = x.data();
  const T* wv = w.data();
  T* ov = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    T* __restrict orow = ov + r * out_dim;
    if (bias.defined())
      std::copy(bias.data(), bias.data() + out_dim, orow);
    for (std::size_t i = 0; i < in; ++i) {
      const T s = xv[r * in + i];
      const T* __restrict wrow = wv + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) orow[o] += s * wrow[o];
    }
  }

  const bool needs = x.requires_grad() || w.requires_grad() ||
                     (bias.defined() && bias.requires_grad());
  if (tape && needs) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = bias, oc = out;
    tape->record([xc, wc, bc, oc, n, in, out_dim]() mutable {
      const T* og = oc.grad_data();
      if (bc.defined() && bc.requires_grad()) {
        T* db = bc.grad_data();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) db[o] += og[r * out_dim + o];
      }
      if (wc.requires_grad()) {
        T* dw = wc.grad_data();
        const T* xv = xc.data();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            const T s = xv[r * in + i];
            T* __restrict dwr = dw + i * out_dim;
            const T* __restrict ogr = og + r * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) dwr[o] += s * ogr[o];
          }
      }
      if (xc.requires_grad()) {
        T* dx = xc.grad_data();
        const T* wv = wc.data();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            const T* __restrict wrow = wv + i * out_dim;
            const T* __restrict ogr = og + r * out_dim;
            T acc = T(0);
            for (std::size_t o = 0; o < out_dim; ++o) acc += wrow[o] * ogr[o];
            dx[r * in + i] += acc;
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  return linear_impl(tape, x, w, bias, "linear");
}

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w) {
  return linear_impl(tape, x, w, Tensor<T>{}, "matmul");
}

/// Global average pooling: (h,w,c) -> (c), or (n,h,w,c) -> (n,c).
template <typename T>
Tensor<T> gap(Tape<T>* tape, const Tensor<T>& x) {
  const auto d = detail::map_dims(x.shape(), "gap");
  const std::size_t px = d.h * d.w;
  Tensor<T> out = Tensor<T>::zeros(d.batched ? Shape{d.n, d.c} : Shape{d.c});
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t im = 0; im < d.n; ++im) {
    T* orow = ov + im * d.c;
    const T* base = xv + im * px * d.c;
    for (std::size_t p = 0; p < px; ++p)
      for (std::size_t c = 0; c < d.c; ++c) orow[c] += base[p * d.c + c];
    for (std::size_t c = 0; c < d.c; ++c) orow[c] /= static_cast<T>(px);
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc, n = d.n, px, c = d.c]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      const T scale = T(1) / static_cast<T>(px);
      for (std::size_t im = 0; im < n; ++im)
        for (std::size_t p = 0; p < px; ++p)
          for (std::size_t ch = 0; ch < c; ++ch)
            xg[(im * px + p) * c + ch] += og[im * c + ch] * scale;
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      const T* xv = xc.data();
      for (std::size_t i = 0; i < xc.numel(); ++i)
        if (xv[i] > T(0)) xg[i] += og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = detail::stable_sigmoid(xv[i]);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      const T* ov = oc.data();
      for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += og[i] * ov[i] * (T(1) - ov[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = std::tanh(xv[i]);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      const T* ov = oc.data();
      for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += og[i] * (T(1) - ov[i] * ov[i]);
    });
  }
  return out;
}

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* av = a.data();
  const T* bv = b.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const T* og = oc.grad_data();
      if (ac.requires_grad()) {
        T* ag = ac.grad_data();
        for (std::size_t i = 0; i < ac.numel(); ++i) ag[i] += og[i];
      }
      if (bc.requires_grad()) {
        T* bg = bc.grad_data();
        for (std::size_t i = 0; i < bc.numel(); ++i) bg[i] += og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> hadamard(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "hadamard");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* av = a.data();
  const T* bv = b.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * bv[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc]() mutable {
      const T* og = oc.grad_data();
      if (ac.requires_grad()) {
        T* ag = ac.grad_data();
        const T* bv = bc.data();
        for (std::size_t i = 0; i < ac.numel(); ++i) ag[i] += og[i] * bv[i];
      }
      if (bc.requires_grad()) {
        T* bg = bc.grad_data();
        const T* av = ac.data();
        for (std::size_t i = 0; i < bc.numel(); ++i) bg[i] += og[i] * av[i];
      }
    });
  }
  return out;
}

/// Elementwise y = scale * x + shift.
template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift = T(0)) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) ov[i] = scale * xv[i] + shift;
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc, scale]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += scale * og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  return affine(tape, x, factor, T(0));
}

/// Elementwise sum of a sequence of same-shape tensors.
template <typename T>
Tensor<T> sum_list(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("sum_list: empty sequence");
  for (const auto& t : xs) detail::check_same_shape(xs.front(), t, "sum_list");
  Tensor<T> out = Tensor<T>::zeros(xs.front().shape());
  T* ov = out.data();
  for (const auto& t : xs) {
    const T* tv = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) ov[i] += tv[i];
  }
  bool needs = false;
  for (const auto& t : xs) needs = needs || t.requires_grad();
  if (tape && needs) {
    out.set_requires_grad(true);
    Tensor<T> oc = out;
    std::vector<Tensor<T>> cap = xs;
    tape->record([cap, oc]() mutable {
      const T* og = oc.grad_data();
      for (auto& t : cap)
        if (t.requires_grad()) {
          T* tg = t.grad_data();
          for (std::size_t i = 0; i < t.numel(); ++i) tg[i] += og[i];
        }
    });
  }
  return out;
}

/// Spatial crop: rows [y0, y0+ch), columns [x0, x0+cw), all channels.
template <typename T>
Tensor<T> crop(Tape<T>* tape, const Tensor<T>& x, std::size_t y0, std::size_t ch,
               std::size_t x0, std::size_t cw) {
  const auto d = detail::map_dims(x.shape(), "crop");
  if (y0 + ch > d.h || x0 + cw > d.w)
    throw ShapeError("crop: region exceeds input extents " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(d.batched ? Shape{d.n, ch, cw, d.c} : Shape{ch, cw, d.c});
  const T* xv = x.data();
  T* ov = out.data();
  const std::size_t img_in = d.h * d.w * d.c;
  const std::size_t img_out = ch * cw * d.c;
  for (std::size_t im = 0; im < d.n; ++im)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t xx = 0; xx < cw; ++xx)
        std::copy(xv + im * img_in + ((y0 + y) * d.w + x0 + xx) * d.c,
                  xv + im * img_in + ((y0 + y) * d.w + x0 + xx) * d.c + d.c,
                  ov + im * img_out + (y * cw + xx) * d.c);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc, d, y0, ch, x0, cw, img_in, img_out]() mutable {
      T* xg = xc.grad_data();
      const T* og = oc.grad_data();
      for (std::size_t im = 0; im < d.n; ++im)
        for (std::size_t y = 0; y < ch; ++y)
          for (std::size_t xx = 0; xx < cw; ++xx) {
            T* dst = xg + im * img_in + ((y0 + y) * d.w + x0 + xx) * d.c;
            const T* src = og + im * img_out + (y * cw + xx) * d.c;
            for (std::size_t c = 0; c < d.c; ++c) dst[c] += src[c];
          }
    });
  }
  return out;
}

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> reduce_sum(Tape<T>* tape, const Tensor<T>& x) {
  T acc = T(0);
  const T* xv = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += xv[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      T* xg = xc.grad_data();
      const T g = oc.grad()[0];
      for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += g;
    });
  }
  return out;
}

/// Row-wise softmax of (n,k) or (k) logits; forward-only helper for inference.
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  const bool batched = logits.rank() == 2;
  const std::size_t n = batched ? logits.dim(0) : 1;
  const std::size_t k = batched ? logits.dim(1) : logits.dim(0);
  std::vector<T> probs(n * k);
  const T* lv = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = lv + r * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp(row[j] - mx);
      z += probs[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= z;
  }
  return probs;
}

}  // namespace grrnn::ops
