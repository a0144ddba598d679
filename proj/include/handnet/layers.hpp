#pragma once

// Forward and backward passes for the layer kinds used by both networks.
// Every forward that takes a cache pointer fills it when non-null; the
// matching backward requires that cache.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "handnet/tensor.hpp"

namespace handnet {

using Rng = std::mt19937_64;

// ----------------------------------------------------------------------------
// Convolution. Kernels are kh x kw x Cin x Cout so that flattening them to
// (kh*kw*Cin) x Cout lines up with im2col's (kh, kw, c) patch order.

// Non-owning: refers to tensors held by the model.
template <typename T>
struct ConvParams {
  const Tensor<T>& kernels;
  const Tensor<T>& bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

template <typename T>
struct ConvCache {
  Tensor<T> input;  // patches are rebuilt per image in backward
  Shape input_shape;
};

template <typename T>
struct ConvGrads {
  Tensor<T> d_input;  // empty when not requested
  Tensor<T> d_kernels;
  Tensor<T> d_bias;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& p, ConvCache<T>* cache = nullptr);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& d_out, const ConvParams<T>& p, const ConvCache<T>& cache,
                             bool want_input_grad = true);

// ----------------------------------------------------------------------------
// Max pooling, ceiling mode: Hout = ceil((H - window) / stride) + 1 and the
// trailing windows are clipped at the border.

struct PoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

std::size_t pool_output_size(std::size_t input, std::size_t window, std::size_t stride);

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride,
                          PoolCache* cache = nullptr);

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& d_out, const PoolCache& cache);

// ----------------------------------------------------------------------------
// ReLU. The boundary x == 0 takes the zero branch in both directions.

struct ReluCache {
  std::vector<std::uint8_t> active;
};

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input, ReluCache* cache = nullptr);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& d_out, const ReluCache& cache);

// ----------------------------------------------------------------------------
// Across-channel local response normalization:
//   b_c = a_c / (k + (alpha / n) * sum_{c' in [c - n/2, c + n/2]} a_c'^2)^beta

struct LrnParams {
  std::size_t depth_radius = 5;  // n, the window width in channels
  double bias = 2.0;             // k
  double alpha = 1e-4;
  double beta = 0.75;

  void validate() const;
};

template <typename T>
struct LrnCache {
  Tensor<T> input;
  Tensor<T> scale;  // the bracketed denominator base per element
};

template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& input, const LrnParams& p, LrnCache<T>* cache = nullptr);

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& d_out, const LrnParams& p, const LrnCache<T>& cache);

// ----------------------------------------------------------------------------
// Fully connected: x (N x In) * W (In x Out) + b.

template <typename T>
struct FcParams {
  const Tensor<T>& weights;
  const Tensor<T>& bias;
};

template <typename T>
struct FcCache {
  Tensor<T> input;
};

template <typename T>
struct FcGrads {
  Tensor<T> d_input;
  Tensor<T> d_weights;
  Tensor<T> d_bias;
};

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const FcParams<T>& p, FcCache<T>* cache = nullptr);

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& d_out, const FcParams<T>& p, const FcCache<T>& cache);

// ----------------------------------------------------------------------------
// Inverted dropout. At inference it is the identity; in training each element
// is zeroed with probability `rate` and survivors are scaled by 1/(1-rate).

template <typename T>
struct DropoutCache {
  std::vector<T> mask;  // 0 or 1/(1-rate)
};

void validate_dropout_rate(double rate);

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& input, double rate, bool training, Rng& rng,
                          DropoutCache<T>* cache = nullptr);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& d_out, const DropoutCache<T>& cache);

// ----------------------------------------------------------------------------
// Row-wise softmax fused with mean cross-entropy over the batch.

template <typename T>
struct SoftmaxResult {
  Tensor<T> probs;
  T loss = T(0);
};

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Throws DataError unless every row of `onehot` has exactly one 1 and zeros
// elsewhere.
template <typename T>
void validate_onehot(const Tensor<T>& onehot);

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& onehot);

// d loss / d logits = (probs - onehot) / N
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, const Tensor<T>& onehot);

}  // namespace handnet
