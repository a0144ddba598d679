#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "handnet/layers.hpp"
#include "handnet/tensor.hpp"

namespace handnet {

enum class LayerKind { kConv, kRelu, kMaxPool, kLrn, kFlatten, kFullyConnected, kDropout, kSoftmax };

const char* to_string(LayerKind kind) noexcept;

// One entry of a network's layer list. Only the fields relevant to `kind`
// are meaningful. Shapes are per sample: H x W x C before flatten, {features}
// after.
struct LayerDesc {
  LayerKind kind = LayerKind::kRelu;
  std::string name;  // parameter prefix for conv/fc layers, e.g. "conv1"

  std::size_t kernel = 0;   // conv: square kernel side
  std::size_t filters = 0;  // conv: output channels
  std::size_t stride = 1;   // conv / pool
  std::size_t pad = 0;      // conv
  std::size_t window = 0;   // pool
  LrnParams lrn;            // lrn
  std::size_t units = 0;    // fc: output width
  double rate = 0.0;        // dropout

  Shape in_shape;
  Shape out_shape;

  bool trainable() const noexcept { return kind == LayerKind::kConv || kind == LayerKind::kFullyConnected; }
};

enum class NetworkId : std::uint8_t { kShallow = 0, kDeep = 1 };

const char* to_string(NetworkId id) noexcept;
NetworkId parse_network_id(const std::string& name);

struct NetworkSpec {
  NetworkId id = NetworkId::kShallow;
  Shape input_shape;
  std::vector<LayerDesc> layers;

  // Index of the final convolution layer.
  std::size_t last_conv_index() const;
  std::size_t count(LayerKind kind) const;
  // "<layer>.weight" / "<layer>.bias" for every trainable layer, in layer order.
  std::vector<std::string> param_names() const;
};

// Appends layers while tracking the running per-sample shape; throws
// DimensionError as soon as a layer does not fit its input.
class SpecBuilder {
 public:
  SpecBuilder(NetworkId id, Shape input);

  SpecBuilder& conv(std::size_t kernel, std::size_t filters, std::size_t stride, std::size_t pad);
  SpecBuilder& relu();
  SpecBuilder& maxpool(std::size_t window, std::size_t stride);
  SpecBuilder& lrn(const LrnParams& params);
  SpecBuilder& flatten();
  SpecBuilder& fully_connected(std::size_t units);
  SpecBuilder& dropout(double rate);
  SpecBuilder& softmax();

  NetworkSpec build();

 private:
  LayerDesc& push(LayerKind kind, Shape out);

  NetworkSpec spec_;
  Shape current_;
  std::size_t convs_ = 0;
  std::size_t fcs_ = 0;
};

// Architecture knobs. Defaults are the reference configurations; overriding
// them (e.g. a smaller input for gradient checks) keeps the layer plan.
struct ShallowConfig {
  std::size_t input_size = 32;
  std::size_t conv1_filters = 64;
  std::size_t conv2_filters = 64;
  std::size_t kernel = 5;
  std::size_t fc_units = 384;
  double dropout = 0.4;
  LrnParams lrn{};
};

struct DeepConfig {
  std::size_t input_size = 32;
  std::array<std::size_t, 5> conv_filters{64, 128, 256, 256, 128};
  std::size_t fc_units = 512;
  double dropout = 0.4;
};

// conv5x5/64 -> relu -> pool3/2 -> lrn -> conv5x5/64 -> relu -> lrn -> pool3/2
//   -> flatten -> fc384 -> relu -> dropout -> fc2 -> softmax
NetworkSpec build_shallow(const ShallowConfig& config = {});

// conv5x5/64 -> relu -> pool -> conv5x5/128 -> relu -> pool -> conv3x3/256 -> relu
//   -> conv3x3/256 -> relu -> conv3x3/128 -> relu -> pool -> flatten -> fc512
//   -> relu -> dropout -> fc2 -> softmax
NetworkSpec build_deep(const DeepConfig& config = {});

NetworkSpec build_network(NetworkId id);

// Copy of `spec` with every dropout layer set to `rate`.
NetworkSpec with_dropout(NetworkSpec spec, double rate);

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <typename T>
struct ModelState {
  NetworkSpec spec;
  TensorMap<T> params;
  TensorMap<T> adam_m;
  TensorMap<T> adam_v;
  std::uint64_t step = 0;

  template <typename U>
  ModelState<U> cast() const;
};

inline constexpr double kDefaultInitStd = 0.005;

// Weights ~ Normal(0, std^2) drawn in layer order from Rng(seed); biases,
// moments and the step counter are zero.
template <typename T>
ModelState<T> init_params(const NetworkSpec& spec, std::uint64_t seed, double init_std = kDefaultInitStd);

template <typename T>
using LayerCache = std::variant<std::monostate, ConvCache<T>, PoolCache, ReluCache, LrnCache<T>, FcCache<T>,
                                DropoutCache<T>, Shape>;

template <typename T>
struct ForwardPass {
  Tensor<T> logits;
  Tensor<T> probs;
  std::vector<LayerCache<T>> caches;  // one per layer, training mode only
};

// batch is N x H x W x C matching spec.input_shape. Dropout draws from `rng`
// only when training.
template <typename T>
ForwardPass<T> forward(const ModelState<T>& model, const Tensor<T>& batch, bool training, Rng& rng);

// Inference-mode probabilities.
template <typename T>
Tensor<T> predict(const ModelState<T>& model, const Tensor<T>& batch);

struct BackwardOptions {
  // Negates everything the given layer's backward produces. Used to check
  // that gradient verification catches a broken layer.
  std::optional<std::size_t> negate_layer;
};

template <typename T>
TensorMap<T> backward(const ModelState<T>& model, const ForwardPass<T>& pass, const Tensor<T>& d_logits,
                      const BackwardOptions& options = {});

// Hash over every ReLU activity mask and max-pool routing decision recorded
// in a training-mode pass. Two passes share a signature iff they sit on the
// same linear piece of the network.
template <typename T>
std::uint64_t kink_signature(const ForwardPass<T>& pass);

template <typename T>
struct LossAndGrads {
  T loss = T(0);
  Tensor<T> probs;
  TensorMap<T> grads;
};

// One training-mode forward + backward with the fused softmax/cross-entropy head.
template <typename T>
LossAndGrads<T> loss_and_gradients(const ModelState<T>& model, const Tensor<T>& batch, const Tensor<T>& labels,
                                   Rng& rng, const BackwardOptions& options = {});

struct GrayMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Output of the final convolution (before its activation) for one H x W x C
// image, one map per filter, each min-max scaled to 0..255. Constant maps
// come out all zero.
template <typename T>
std::vector<GrayMap> export_activation_maps(const ModelState<T>& model, const Tensor<T>& image);

// Binary PGM (P5).
void write_pgm(const std::filesystem::path& path, const GrayMap& map);

// Writes <dir>/<prefix>NN.pgm for every map and returns the paths.
std::vector<std::filesystem::path> write_activation_maps(const std::filesystem::path& dir,
                                                         const std::vector<GrayMap>& maps,
                                                         const std::string& prefix = "channel_");

}  // namespace handnet
