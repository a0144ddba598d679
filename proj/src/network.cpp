#include "handnet/network.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "fileutil.hpp"

namespace handnet {

const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kLrn: return "lrn";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "?";
}

const char* to_string(NetworkId id) noexcept { return id == NetworkId::kShallow ? "shallow" : "deep"; }

NetworkId parse_network_id(const std::string& name) {
  if (name == "shallow") return NetworkId::kShallow;
  if (name == "deep") return NetworkId::kDeep;
  throw ConfigError("unknown network '" + name + "' (expected shallow or deep)");
}

// ---------------------------------------------------------------------------
// NetworkSpec

std::size_t NetworkSpec::last_conv_index() const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::kConv) return i;
  }
  throw UsageError("network has no convolution layer");
}

std::size_t NetworkSpec::count(LayerKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [kind](const LayerDesc& l) { return l.kind == kind; }));
}

std::vector<std::string> NetworkSpec::param_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers) {
    if (l.trainable()) {
      names.push_back(l.name + ".weight");
      names.push_back(l.name + ".bias");
    }
  }
  return names;
}

// ---------------------------------------------------------------------------
// SpecBuilder

SpecBuilder::SpecBuilder(NetworkId id, Shape input) : current_(input) {
  if (input.rank() != 3) throw DimensionError("network input must be H x W x C, got " + input.str());
  spec_.id = id;
  spec_.input_shape = std::move(input);
}

LayerDesc& SpecBuilder::push(LayerKind kind, Shape out) {
  LayerDesc d;
  d.kind = kind;
  d.in_shape = current_;
  d.out_shape = out;
  current_ = std::move(out);
  spec_.layers.push_back(std::move(d));
  return spec_.layers.back();
}

SpecBuilder& SpecBuilder::conv(std::size_t kernel, std::size_t filters, std::size_t stride, std::size_t pad) {
  if (current_.rank() != 3) throw DimensionError("conv after flatten");
  if (filters == 0) throw DimensionError("conv needs at least one filter");
  PatchGeometry g{current_[0], current_[1], current_[2], kernel, kernel, stride, pad};
  g.validate();
  auto& d = push(LayerKind::kConv, Shape{g.out_h(), g.out_w(), filters});
  d.name = "conv" + std::to_string(++convs_);
  d.kernel = kernel;
  d.filters = filters;
  d.stride = stride;
  d.pad = pad;
  return *this;
}

SpecBuilder& SpecBuilder::relu() {
  push(LayerKind::kRelu, current_);
  return *this;
}

SpecBuilder& SpecBuilder::maxpool(std::size_t window, std::size_t stride) {
  if (current_.rank() != 3) throw DimensionError("maxpool after flatten");
  Shape out{pool_output_size(current_[0], window, stride), pool_output_size(current_[1], window, stride),
            current_[2]};
  auto& d = push(LayerKind::kMaxPool, std::move(out));
  d.window = window;
  d.stride = stride;
  return *this;
}

SpecBuilder& SpecBuilder::lrn(const LrnParams& params) {
  params.validate();
  push(LayerKind::kLrn, current_).lrn = params;
  return *this;
}

SpecBuilder& SpecBuilder::flatten() {
  push(LayerKind::kFlatten, Shape{current_.numel()});
  return *this;
}

SpecBuilder& SpecBuilder::fully_connected(std::size_t units) {
  if (current_.rank() != 1) throw DimensionError("fully connected layer needs a flattened input");
  if (units == 0) throw DimensionError("fully connected layer needs at least one unit");
  auto& d = push(LayerKind::kFullyConnected, Shape{units});
  d.name = "fc" + std::to_string(++fcs_);
  d.units = units;
  return *this;
}

SpecBuilder& SpecBuilder::dropout(double rate) {
  validate_dropout_rate(rate);
  push(LayerKind::kDropout, current_).rate = rate;
  return *this;
}

SpecBuilder& SpecBuilder::softmax() {
  push(LayerKind::kSoftmax, current_);
  return *this;
}

NetworkSpec SpecBuilder::build() {
  if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::kSoftmax || spec_.count(LayerKind::kSoftmax) != 1) {
    throw DimensionError("network must end in exactly one softmax layer");
  }
  if (current_ != Shape{2}) throw DimensionError("network must produce 2 logits, got " + current_.str());
  return std::move(spec_);
}

// ---------------------------------------------------------------------------
// The two architectures

NetworkSpec build_shallow(const ShallowConfig& c) {
  const std::size_t pad = c.kernel / 2;
  return SpecBuilder(NetworkId::kShallow, Shape{c.input_size, c.input_size, 3})
      .conv(c.kernel, c.conv1_filters, 1, pad)
      .relu()
      .maxpool(3, 2)
      .lrn(c.lrn)
      .conv(c.kernel, c.conv2_filters, 1, pad)
      .relu()
      .lrn(c.lrn)
      .maxpool(3, 2)
      .flatten()
      .fully_connected(c.fc_units)
      .relu()
      .dropout(c.dropout)
      .fully_connected(2)
      .softmax()
      .build();
}

NetworkSpec build_deep(const DeepConfig& c) {
  const auto& f = c.conv_filters;
  return SpecBuilder(NetworkId::kDeep, Shape{c.input_size, c.input_size, 3})
      .conv(5, f[0], 1, 2)
      .relu()
      .maxpool(3, 2)
      .conv(5, f[1], 1, 2)
      .relu()
      .maxpool(3, 2)
      .conv(3, f[2], 1, 1)
      .relu()
      .conv(3, f[3], 1, 1)
      .relu()
      .conv(3, f[4], 1, 1)
      .relu()
      .maxpool(3, 2)
      .flatten()
      .fully_connected(c.fc_units)
      .relu()
      .dropout(c.dropout)
      .fully_connected(2)
      .softmax()
      .build();
}

NetworkSpec build_network(NetworkId id) { return id == NetworkId::kShallow ? build_shallow() : build_deep(); }

NetworkSpec with_dropout(NetworkSpec spec, double rate) {
  validate_dropout_rate(rate);
  for (auto& l : spec.layers) {
    if (l.kind == LayerKind::kDropout) l.rate = rate;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Shape weight_shape(const LayerDesc& l) {
  if (l.kind == LayerKind::kConv) return Shape{l.kernel, l.kernel, l.in_shape[2], l.filters};
  return Shape{l.in_shape[0], l.units};
}

Shape bias_shape(const LayerDesc& l) { return Shape{l.kind == LayerKind::kConv ? l.filters : l.units}; }

template <typename T>
const Tensor<T>& param(const TensorMap<T>& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw UsageError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
TensorMap<T> zeros_like(const TensorMap<T>& params) {
  TensorMap<T> out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor<T>(t.shape()));
  return out;
}

template <typename T, typename U>
TensorMap<U> cast_map(const TensorMap<T>& in) {
  TensorMap<U> out;
  for (const auto& [name, t] : in) out.emplace(name, t.template cast<U>());
  return out;
}

}  // namespace

template <typename T>
template <typename U>
ModelState<U> ModelState<T>::cast() const {
  return ModelState<U>{spec, cast_map<T, U>(params), cast_map<T, U>(adam_m), cast_map<T, U>(adam_v), step};
}

template <typename T>
ModelState<T> init_params(const NetworkSpec& spec, std::uint64_t seed, double init_std) {
  if (!(init_std > 0)) throw ConfigError("init_std must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  ModelState<T> model;
  model.spec = spec;
  for (const auto& l : spec.layers) {
    if (!l.trainable()) continue;
    Tensor<T> w(weight_shape(l));
    for (auto& v : w.data()) v = static_cast<T>(normal(rng));
    model.params.emplace(l.name + ".weight", std::move(w));
    model.params.emplace(l.name + ".bias", Tensor<T>(bias_shape(l)));
  }
  model.adam_m = zeros_like(model.params);
  model.adam_v = zeros_like(model.params);
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
ForwardPass<T> forward(const ModelState<T>& model, const Tensor<T>& batch, bool training, Rng& rng) {
  const Shape& in = model.spec.input_shape;
  if (batch.rank() != 4 || batch.dim(1) != in[0] || batch.dim(2) != in[1] || batch.dim(3) != in[2]) {
    throw DimensionError("network expects N x " + std::to_string(in[0]) + " x " + std::to_string(in[1]) +
                         " x " + std::to_string(in[2]) + " input, got " + batch.shape().str());
  }
  const std::size_t n = batch.dim(0);

  ForwardPass<T> pass;
  if (training) pass.caches.resize(model.spec.layers.size());
  Tensor<T> x = batch;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerDesc& l = model.spec.layers[i];
    auto* slot = training ? &pass.caches[i] : nullptr;
    auto cache_as = [slot]<typename C>(std::type_identity<C>) -> C* {
      return slot ? &slot->template emplace<C>() : nullptr;
    };
    switch (l.kind) {
      case LayerKind::kConv: {
        const ConvParams<T> p{param(model.params, l.name + ".weight"), param(model.params, l.name + ".bias"),
                              l.stride, l.pad};
        x = conv2d_forward(x, p, cache_as(std::type_identity<ConvCache<T>>{}));
        break;
      }
      case LayerKind::kRelu:
        x = relu_forward(x, cache_as(std::type_identity<ReluCache>{}));
        break;
      case LayerKind::kMaxPool:
        x = maxpool_forward(x, l.window, l.stride, cache_as(std::type_identity<PoolCache>{}));
        break;
      case LayerKind::kLrn:
        x = lrn_forward(x, l.lrn, cache_as(std::type_identity<LrnCache<T>>{}));
        break;
      case LayerKind::kFlatten:
        if (slot) slot->template emplace<Shape>(x.shape());
        x = std::move(x).reshaped(Shape{n, l.out_shape[0]});
        break;
      case LayerKind::kFullyConnected: {
        const FcParams<T> p{param(model.params, l.name + ".weight"), param(model.params, l.name + ".bias")};
        x = fc_forward(x, p, cache_as(std::type_identity<FcCache<T>>{}));
        break;
      }
      case LayerKind::kDropout:
        x = dropout_forward(x, l.rate, training, rng, cache_as(std::type_identity<DropoutCache<T>>{}));
        break;
      case LayerKind::kSoftmax:
        pass.probs = softmax(x);
        break;
    }
  }
  pass.logits = std::move(x);
  return pass;
}

template <typename T>
Tensor<T> predict(const ModelState<T>& model, const Tensor<T>& batch) {
  Rng unused(0);
  return forward(model, batch, /*training=*/false, unused).probs;
}

template <typename T>
TensorMap<T> backward(const ModelState<T>& model, const ForwardPass<T>& pass, const Tensor<T>& d_logits,
                      const BackwardOptions& options) {
  const auto& layers = model.spec.layers;
  if (pass.caches.size() != layers.size()) {
    throw UsageError("backward needs the caches of a training-mode forward pass");
  }
  if (d_logits.shape() != pass.logits.shape()) {
    throw DimensionError("upstream gradient " + d_logits.shape().str() + " does not match logits " +
                         pass.logits.shape().str());
  }

  TensorMap<T> grads;
  Tensor<T> g = d_logits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const LayerDesc& l = layers[i];
    const auto& slot = pass.caches[i];
    auto cache = [&]<typename C>(std::type_identity<C>) -> const C& {
      if (const C* c = std::get_if<C>(&slot)) return *c;
      throw UsageError("missing forward cache for layer " + std::to_string(i) + " (" + to_string(l.kind) + ")");
    };
    const bool negate = options.negate_layer && *options.negate_layer == i;
    switch (l.kind) {
      case LayerKind::kConv: {
        const ConvParams<T> p{param(model.params, l.name + ".weight"), param(model.params, l.name + ".bias"),
                              l.stride, l.pad};
        ConvGrads<T> cg = conv2d_backward(g, p, cache(std::type_identity<ConvCache<T>>{}), /*want_input_grad=*/i > 0);
        if (negate) {
          cg.d_kernels *= T(-1);
          cg.d_bias *= T(-1);
          if (i > 0) cg.d_input *= T(-1);
        }
        grads.insert_or_assign(l.name + ".weight", std::move(cg.d_kernels));
        grads.insert_or_assign(l.name + ".bias", std::move(cg.d_bias));
        g = std::move(cg.d_input);
        continue;
      }
      case LayerKind::kFullyConnected: {
        const FcParams<T> p{param(model.params, l.name + ".weight"), param(model.params, l.name + ".bias")};
        FcGrads<T> fg = fc_backward(g, p, cache(std::type_identity<FcCache<T>>{}));
        if (negate) {
          fg.d_weights *= T(-1);
          fg.d_bias *= T(-1);
          fg.d_input *= T(-1);
        }
        grads.insert_or_assign(l.name + ".weight", std::move(fg.d_weights));
        grads.insert_or_assign(l.name + ".bias", std::move(fg.d_bias));
        g = std::move(fg.d_input);
        continue;
      }
      case LayerKind::kRelu:
        g = relu_backward(g, cache(std::type_identity<ReluCache>{}));
        break;
      case LayerKind::kMaxPool:
        g = maxpool_backward(g, cache(std::type_identity<PoolCache>{}));
        break;
      case LayerKind::kLrn:
        g = lrn_backward(g, l.lrn, cache(std::type_identity<LrnCache<T>>{}));
        break;
      case LayerKind::kFlatten:
        g = std::move(g).reshaped(cache(std::type_identity<Shape>{}));
        break;
      case LayerKind::kDropout:
        g = dropout_backward(g, cache(std::type_identity<DropoutCache<T>>{}));
        break;
      case LayerKind::kSoftmax:
        // The fused cross-entropy head already produced d_logits.
        break;
    }
    if (negate) g *= T(-1);
  }
  return grads;
}

template <typename T>
std::uint64_t kink_signature(const ForwardPass<T>& pass) {
  // FNV-1a over the piecewise-linear decisions.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& slot : pass.caches) {
    if (const auto* r = std::get_if<ReluCache>(&slot)) {
      for (auto a : r->active) mix(a);
    } else if (const auto* p = std::get_if<PoolCache>(&slot)) {
      for (auto a : p->argmax) mix(a);
    }
  }
  return h;
}

template <typename T>
LossAndGrads<T> loss_and_gradients(const ModelState<T>& model, const Tensor<T>& batch, const Tensor<T>& labels,
                                   Rng& rng, const BackwardOptions& options) {
  ForwardPass<T> pass = forward(model, batch, /*training=*/true, rng);
  const SoftmaxResult<T> sce = softmax_cross_entropy(pass.logits, labels);
  const Tensor<T> d_logits = softmax_cross_entropy_backward(sce.probs, labels);
  LossAndGrads<T> out;
  out.loss = sce.loss;
  out.grads = backward(model, pass, d_logits, options);
  out.probs = std::move(pass.probs);
  return out;
}

// ---------------------------------------------------------------------------
// Activation export

template <typename T>
std::vector<GrayMap> export_activation_maps(const ModelState<T>& model, const Tensor<T>& image) {
  const std::size_t last = model.spec.last_conv_index();
  Tensor<T> x = image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)});

  // Inference prefix up to and including the last convolution.
  for (std::size_t i = 0; i <= last; ++i) {
    const LayerDesc& l = model.spec.layers[i];
    switch (l.kind) {
      case LayerKind::kConv:
        x = conv2d_forward(x, ConvParams<T>{param(model.params, l.name + ".weight"),
                                            param(model.params, l.name + ".bias"), l.stride, l.pad});
        break;
      case LayerKind::kRelu: x = relu_forward(x); break;
      case LayerKind::kMaxPool: x = maxpool_forward(x, l.window, l.stride); break;
      case LayerKind::kLrn: x = lrn_forward(x, l.lrn); break;
      case LayerKind::kDropout: break;
      default: throw UsageError("unexpected layer before the last convolution");
    }
  }

  const std::size_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<GrayMap> maps(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T lo = x[ch], hi = x[ch];
    for (std::size_t p = 0; p < h * w; ++p) {
      lo = std::min(lo, x[p * c + ch]);
      hi = std::max(hi, x[p * c + ch]);
    }
    GrayMap& m = maps[ch];
    m.height = h;
    m.width = w;
    m.pixels.assign(h * w, 0);
    if (hi > lo) {
      for (std::size_t p = 0; p < h * w; ++p) {
        const double scaled = 255.0 * static_cast<double>(x[p * c + ch] - lo) / static_cast<double>(hi - lo);
        m.pixels[p] = static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
      }
    }
  }
  return maps;
}

void write_pgm(const std::filesystem::path& path, const GrayMap& map) {
  std::string bytes = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(map.pixels.data()), map.pixels.size());
  detail::write_file(path, bytes);
}

std::vector<std::filesystem::path> write_activation_maps(const std::filesystem::path& dir,
                                                         const std::vector<GrayMap>& maps,
                                                         const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%02zu", i);
    paths.push_back(dir / (prefix + idx + ".pgm"));
    write_pgm(paths.back(), maps[i]);
  }
  return paths;
}

// ---------------------------------------------------------------------------

#define HANDNET_INSTANTIATE(T)                                                                             \
  template ModelState<T> init_params<T>(const NetworkSpec&, std::uint64_t, double);                         \
  template ForwardPass<T> forward<T>(const ModelState<T>&, const Tensor<T>&, bool, Rng&);                   \
  template Tensor<T> predict<T>(const ModelState<T>&, const Tensor<T>&);                                    \
  template TensorMap<T> backward<T>(const ModelState<T>&, const ForwardPass<T>&, const Tensor<T>&,          \
                                    const BackwardOptions&);                                                \
  template std::uint64_t kink_signature<T>(const ForwardPass<T>&);                                          \
  template LossAndGrads<T> loss_and_gradients<T>(const ModelState<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                                 Rng&, const BackwardOptions&);                             \
  template std::vector<GrayMap> export_activation_maps<T>(const ModelState<T>&, const Tensor<T>&);

HANDNET_INSTANTIATE(float)
HANDNET_INSTANTIATE(double)

#undef HANDNET_INSTANTIATE

template ModelState<double> ModelState<float>::cast<double>() const;
template ModelState<float> ModelState<double>::cast<float>() const;
template ModelState<float> ModelState<float>::cast<float>() const;
template ModelState<double> ModelState<double>::cast<double>() const;

}  // namespace handnet
