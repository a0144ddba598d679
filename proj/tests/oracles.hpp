#pragma once

// Independent reference implementations used as test oracles. None of these
// share code with the engine: plain loops over the textbook definitions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "handnet/tensor.hpp"

namespace oracle {

using handnet::Shape;
using handnet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// N x H x W x Cin input, kh x kw x Cin x Cout kernels, direct summation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> out(Shape{n, oh, ow, cout});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = b[co];
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                acc += static_cast<double>(x[((s * h + iy) * w + ix) * cin + ci]) *
                       static_cast<double>(k[((dy * kw + dx) * cin + ci) * cout + co]);
              }
            }
          out[((s * oh + oy) * ow + ox) * cout + co] = static_cast<T>(acc);
        }
  return out;
}

// Ceil-mode max pool: windows start at multiples of stride and are clipped
// at the border; the last window must start inside the input.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto extent = [&](std::size_t in) {
    std::size_t o = 0;
    while (o * stride < in && (o == 0 || o * stride + window <= in + stride - 1)) ++o;
    return o;
  };
  const std::size_t oh = extent(h), ow = extent(w);
  Tensor<T> out(Shape{n, oh, ow, c});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          for (std::size_t y = oy * stride; y < std::min(h, oy * stride + window); ++y)
            for (std::size_t xx = ox * stride; xx < std::min(w, ox * stride + window); ++xx)
              best = std::max(best, x[((s * h + y) * w + xx) * c + ch]);
          out[((s * oh + oy) * ow + ox) * c + ch] = best;
        }
  return out;
}

// b_c = a_c / (k + alpha/n * sum_{|c'-c| <= n/2} a_c'^2)^beta
inline Tensor<double> lrn(const Tensor<double>& x, std::size_t n, double k, double alpha, double beta) {
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / c;
  Tensor<double> out(x.shape());
  const long half = static_cast<long>(n / 2);
  for (std::size_t r = 0; r < rows; ++r)
    for (long ch = 0; ch < static_cast<long>(c); ++ch) {
      double sum = 0;
      for (long j = std::max(0L, ch - half); j <= std::min(static_cast<long>(c) - 1, ch + half); ++j) {
        const double a = x[r * c + j];
        sum += a * a;
      }
      out[r * c + ch] = x[r * c + ch] / std::pow(k + alpha / static_cast<double>(n) * sum, beta);
    }
  return out;
}

// Central differences of a scalar function over every element of `x`.
inline Tensor<double> numeric_grad(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                   double eps = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace oracle
