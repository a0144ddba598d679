#include "handnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace handnet {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) {
    throw DimensionError(std::string(op) + " expects an NxHxWxC tensor, got " + s.str());
  }
}

template <typename T>
PatchGeometry conv_geometry(const Shape& input, const ConvParams<T>& p) {
  require_rank4(input, "conv2d");
  if (p.kernels.rank() != 4) {
    throw DimensionError("conv2d kernels must be kh x kw x Cin x Cout, got " + p.kernels.shape().str());
  }
  if (p.kernels.dim(2) != input[3]) {
    throw DimensionError("conv2d channel mismatch: input " + input.str() + " vs kernels " +
                         p.kernels.shape().str());
  }
  if (p.bias.size() != p.kernels.dim(3)) {
    throw DimensionError("conv2d bias " + p.bias.shape().str() + " does not match kernels " +
                         p.kernels.shape().str());
  }
  PatchGeometry g{input[1], input[2], input[3], p.kernels.dim(0), p.kernels.dim(1), p.stride, p.pad};
  g.validate();
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& p, ConvCache<T>* cache) {
  const PatchGeometry g = conv_geometry(input.shape(), p);
  const std::size_t n = input.dim(0);
  const auto positions = static_cast<Eigen::Index>(g.out_h() * g.out_w());
  const auto patch = static_cast<Eigen::Index>(g.patch_size());
  const auto cout = static_cast<Eigen::Index>(p.kernels.dim(3));
  const std::size_t image_size = g.height * g.width * g.channels;

  // One image at a time keeps the patch matrix cache-resident.
  const ConstMatMap<T> kernels(p.kernels.raw(), patch, cout);
  const auto bias = ConstMatMap<T>(p.bias.raw(), 1, cout);
  Mat<T> cols(positions, patch);
  Tensor<T> out(Shape{n, g.out_h(), g.out_w(), p.kernels.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    im2col_into(input.raw() + i * image_size, g, cols.data());
    MatMap<T> y(out.raw() + i * static_cast<std::size_t>(positions * cout), positions, cout);
    y.noalias() = cols * kernels;
    y.rowwise() += bias.row(0);
  }
  check_finite(out, "conv2d");

  if (cache) {
    cache->input = input;
    cache->input_shape = input.shape();
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& d_out, const ConvParams<T>& p, const ConvCache<T>& cache,
                             bool want_input_grad) {
  if (cache.input.empty()) throw UsageError("conv2d backward called without a forward cache");
  const PatchGeometry g = conv_geometry(cache.input_shape, p);
  const std::size_t n = cache.input_shape[0];
  const auto positions = static_cast<Eigen::Index>(g.out_h() * g.out_w());
  const auto patch = static_cast<Eigen::Index>(g.patch_size());
  const auto cout = static_cast<Eigen::Index>(p.kernels.dim(3));
  const std::size_t image_size = g.height * g.width * g.channels;
  if (d_out.size() != n * static_cast<std::size_t>(positions * cout)) {
    throw DimensionError("conv2d upstream gradient " + d_out.shape().str() + " does not match output");
  }

  ConvGrads<T> grads;
  grads.d_kernels = Tensor<T>(p.kernels.shape());
  grads.d_bias = Tensor<T>(p.bias.shape());
  if (want_input_grad) grads.d_input = Tensor<T>(cache.input_shape);
  MatMap<T> dk(grads.d_kernels.raw(), patch, cout);
  MatMap<T> db(grads.d_bias.raw(), 1, cout);
  const ConstMatMap<T> kernels(p.kernels.raw(), patch, cout);
  Mat<T> cols(positions, patch);
  Mat<T> dcols;
  // Images are accumulated in order so the sums are reproducible.
  for (std::size_t i = 0; i < n; ++i) {
    const ConstMatMap<T> dy(d_out.raw() + i * static_cast<std::size_t>(positions * cout), positions, cout);
    im2col_into(cache.input.raw() + i * image_size, g, cols.data());
    dk.noalias() += cols.transpose() * dy;
    db += dy.colwise().sum();
    if (want_input_grad) {
      dcols.noalias() = dy * kernels.transpose();
      col2im_add(dcols.data(), g, grads.d_input.raw() + i * image_size);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// maxpool

std::size_t pool_output_size(std::size_t input, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw DimensionError("pool window and stride must be >= 1");
  if (window > input) {
    throw DimensionError("pool window " + std::to_string(window) + " exceeds input extent " +
                         std::to_string(input));
  }
  return (input - window + stride - 1) / stride + 1;
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride, PoolCache* cache) {
  require_rank4(input.shape(), "maxpool");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  const std::size_t oh = pool_output_size(h, window, stride);
  const std::size_t ow = pool_output_size(w, window, stride);

  Tensor<T> out(Shape{n, oh, ow, c});
  std::vector<std::uint32_t> arg(out.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::size_t y0 = oy * stride, y1 = std::min(y0 + window, h);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t x0 = ox * stride, x1 = std::min(x0 + window, w);
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          // Scan in row-major window order; strict '>' keeps the lowest index on ties.
          std::size_t best = ((b * h + y0) * w + x0) * c + ch;
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
              const std::size_t idx = ((b * h + y) * w + x) * c + ch;
              if (input[idx] > input[best]) best = idx;
            }
          }
          out[o] = input[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(arg);
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& d_out, const PoolCache& cache) {
  if (cache.argmax.empty()) throw UsageError("maxpool backward called without a forward cache");
  if (d_out.size() != cache.argmax.size()) {
    throw DimensionError("maxpool upstream gradient " + d_out.shape().str() + " does not match output");
  }
  Tensor<T> d_in(cache.input_shape);
  for (std::size_t i = 0; i < d_out.size(); ++i) d_in[cache.argmax[i]] += d_out[i];
  return d_in;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input, ReluCache* cache) {
  Tensor<T> out(input.shape());
  std::vector<std::uint8_t> active(cache ? input.size() : 0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool on = input[i] > T(0);
    out[i] = on ? input[i] : T(0);
    if (cache) active[i] = on;
  }
  if (cache) cache->active = std::move(active);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& d_out, const ReluCache& cache) {
  if (cache.active.size() != d_out.size()) {
    throw UsageError("relu backward called without a matching forward cache");
  }
  Tensor<T> d_in(d_out.shape());
  for (std::size_t i = 0; i < d_out.size(); ++i) d_in[i] = cache.active[i] ? d_out[i] : T(0);
  return d_in;
}

// ---------------------------------------------------------------------------
// lrn

void LrnParams::validate() const {
  if (depth_radius < 1 || !(bias > 0) || !(alpha >= 0) || !(beta > 0)) {
    throw ConfigError("LRN parameters must satisfy n >= 1, k > 0, alpha >= 0, beta > 0");
  }
}

template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& input, const LrnParams& p, LrnCache<T>* cache) {
  p.validate();
  if (input.rank() < 1) throw DimensionError("lrn needs a channel axis");
  const std::size_t c = input.dim(input.rank() - 1);
  const std::size_t pixels = input.size() / c;
  const auto half = static_cast<std::ptrdiff_t>(p.depth_radius / 2);
  const T k = static_cast<T>(p.bias);
  const T a_over_n = static_cast<T>(p.alpha / static_cast<double>(p.depth_radius));
  const T beta = static_cast<T>(p.beta);

  Tensor<T> out(input.shape());
  Tensor<T> scale(input.shape());
  for (std::size_t px = 0; px < pixels; ++px) {
    const T* a = input.raw() + px * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(ch) - half);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(c) - 1, static_cast<std::ptrdiff_t>(ch) + half);
      T sq = 0;
      for (std::ptrdiff_t j = lo; j <= hi; ++j) sq += a[j] * a[j];
      const T s = k + a_over_n * sq;
      scale[px * c + ch] = s;
      out[px * c + ch] = a[ch] * std::pow(s, -beta);
    }
  }
  check_finite(out, "lrn");
  if (cache) {
    cache->input = input;
    cache->scale = std::move(scale);
  }
  return out;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& d_out, const LrnParams& p, const LrnCache<T>& cache) {
  if (cache.input.empty() || cache.input.size() != d_out.size()) {
    throw UsageError("lrn backward called without a matching forward cache");
  }
  const Tensor<T>& input = cache.input;
  const std::size_t c = input.dim(input.rank() - 1);
  const std::size_t pixels = input.size() / c;
  const auto half = static_cast<std::ptrdiff_t>(p.depth_radius / 2);
  const T beta = static_cast<T>(p.beta);
  const T coeff = static_cast<T>(2.0 * p.alpha * p.beta / static_cast<double>(p.depth_radius));

  // dL/da_j = g_j s_j^-beta - (2 alpha beta / n) a_j sum_{c: j in W(c)} g_c a_c s_c^(-beta-1)
  Tensor<T> d_in(input.shape());
  std::vector<T> weighted(c);
  for (std::size_t px = 0; px < pixels; ++px) {
    const T* a = input.raw() + px * c;
    const T* s = cache.scale.raw() + px * c;
    const T* g = d_out.raw() + px * c;
    for (std::size_t ch = 0; ch < c; ++ch) weighted[ch] = g[ch] * a[ch] * std::pow(s[ch], -beta - T(1));
    for (std::size_t j = 0; j < c; ++j) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(j) - half);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(c) - 1, static_cast<std::ptrdiff_t>(j) + half);
      T acc = 0;
      for (std::ptrdiff_t cc = lo; cc <= hi; ++cc) acc += weighted[cc];
      d_in[px * c + j] = g[j] * std::pow(s[j], -beta) - coeff * a[j] * acc;
    }
  }
  return d_in;
}

// ---------------------------------------------------------------------------
// fully connected

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const FcParams<T>& p, FcCache<T>* cache) {
  if (input.rank() != 2 || p.weights.rank() != 2 || input.dim(1) != p.weights.dim(0)) {
    throw DimensionError("fully_connected mismatch: input " + input.shape().str() + " vs weights " +
                         p.weights.shape().str());
  }
  if (p.bias.size() != p.weights.dim(1)) {
    throw DimensionError("fully_connected bias " + p.bias.shape().str() + " does not match weights " +
                         p.weights.shape().str());
  }
  Tensor<T> out = matmul(input, p.weights);
  const std::size_t cols = out.dim(1);
  for (std::size_t r = 0; r < out.dim(0); ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] += p.bias[j];
  }
  check_finite(out, "fully_connected");
  if (cache) cache->input = input;
  return out;
}

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& d_out, const FcParams<T>& p, const FcCache<T>& cache) {
  if (cache.input.empty()) throw UsageError("fully_connected backward called without a forward cache");
  FcGrads<T> grads;
  grads.d_weights = matmul(cache.input, d_out, /*transpose_a=*/true);
  grads.d_bias = reduce(d_out, ReduceKind::kSum, 0);
  grads.d_input = matmul(d_out, p.weights, false, /*transpose_b=*/true);
  return grads;
}

// ---------------------------------------------------------------------------
// dropout

void validate_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
}

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& input, double rate, bool training, Rng& rng,
                          DropoutCache<T>* cache) {
  validate_dropout_rate(rate);
  if (!training) return input;

  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> mask(input.size());
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    mask[i] = uniform(rng) < rate ? T(0) : keep_scale;
    out[i] = input[i] * mask[i];
  }
  if (cache) cache->mask = std::move(mask);
  return out;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& d_out, const DropoutCache<T>& cache) {
  if (cache.mask.size() != d_out.size()) {
    throw UsageError("dropout backward called without a matching forward cache");
  }
  Tensor<T> d_in(d_out.shape());
  for (std::size_t i = 0; i < d_out.size(); ++i) d_in[i] = d_out[i] * cache.mask[i];
  return d_in;
}

// ---------------------------------------------------------------------------
// softmax + cross-entropy

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects N x K logits, got " + logits.shape().str());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> probs(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.raw() + r * k;
    T* p = probs.raw() + r * k;
    const T zmax = *std::max_element(z, z + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) total += (p[j] = std::exp(z[j] - zmax));
    for (std::size_t j = 0; j < k; ++j) p[j] /= total;
  }
  return probs;
}

template <typename T>
void validate_onehot(const Tensor<T>& onehot) {
  if (onehot.rank() != 2) throw DimensionError("labels must be N x K, got " + onehot.shape().str());
  const std::size_t k = onehot.dim(1);
  for (std::size_t r = 0; r < onehot.dim(0); ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = onehot[r * k + j];
      if (v == T(1)) {
        ++ones;
      } else if (v != T(0)) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw DataError("label row " + std::to_string(r) + " is not one-hot");
  }
}

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& onehot) {
  if (logits.shape() != onehot.shape()) {
    throw DimensionError("logits " + logits.shape().str() + " and labels " + onehot.shape().str() +
                         " differ in shape");
  }
  validate_onehot(onehot);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  SoftmaxResult<T> result{softmax(logits), T(0)};

  // -log p_y = logsumexp(z) - z_y, evaluated with the row max shifted out.
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.raw() + r * k;
    const T zmax = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const T lse = zmax + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) total += onehot[r * k + j] * (lse - z[j]);
  }
  result.loss = total / static_cast<T>(n);
  return result;
}

template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, const Tensor<T>& onehot) {
  if (probs.shape() != onehot.shape()) {
    throw DimensionError("probs " + probs.shape().str() + " and labels " + onehot.shape().str() +
                         " differ in shape");
  }
  const T inv_n = T(1) / static_cast<T>(probs.dim(0));
  Tensor<T> d(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) d[i] = (probs[i] - onehot[i]) * inv_n;
  return d;
}

// ---------------------------------------------------------------------------

#define HANDNET_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvParams<T>&, ConvCache<T>*);      \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&,                  \
                                           const ConvCache<T>&, bool);                              \
  template Tensor<T> maxpool_forward<T>(const Tensor<T>&, std::size_t, std::size_t, PoolCache*);    \
  template Tensor<T> maxpool_backward<T>(const Tensor<T>&, const PoolCache&);                      \
  template Tensor<T> relu_forward<T>(const Tensor<T>&, ReluCache*);                                \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const ReluCache&);                         \
  template Tensor<T> lrn_forward<T>(const Tensor<T>&, const LrnParams&, LrnCache<T>*);             \
  template Tensor<T> lrn_backward<T>(const Tensor<T>&, const LrnParams&, const LrnCache<T>&);      \
  template Tensor<T> fc_forward<T>(const Tensor<T>&, const FcParams<T>&, FcCache<T>*);             \
  template FcGrads<T> fc_backward<T>(const Tensor<T>&, const FcParams<T>&, const FcCache<T>&);     \
  template Tensor<T> dropout_forward<T>(const Tensor<T>&, double, bool, Rng&, DropoutCache<T>*);   \
  template Tensor<T> dropout_backward<T>(const Tensor<T>&, const DropoutCache<T>&);                \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                 \
  template void validate_onehot<T>(const Tensor<T>&);                                              \
  template SoftmaxResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> softmax_cross_entropy_backward<T>(const Tensor<T>&, const Tensor<T>&);

HANDNET_INSTANTIATE(float)
HANDNET_INSTANTIATE(double)

#undef HANDNET_INSTANTIATE

}  // namespace handnet
