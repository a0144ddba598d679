#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "handnet/network.hpp"

namespace handnet {

// Central differences (f(w + eps e_i) - f(w - eps e_i)) / (2 eps) for every
// element of `param`. The function sees the perturbed tensor; `param` is
// restored afterwards. Non-finite evaluations raise DivergenceError.
TensorD finite_diff(const std::function<double(const TensorD&)>& loss_fn, TensorD param, double eps = 1e-5);

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradCheckOptions {
  double tolerance = 1e-4;
  double eps = 1e-2;         // largest step of the extrapolated stencil
  std::size_t ladder = 10;   // step sizes tried: eps, eps/2, eps/4, ...
  std::size_t max_elements = 64;  // per parameter tensor, seeded selection
  std::size_t batch = 2;
  std::optional<std::size_t> negate_layer;  // mutation hook
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU/max-pool kink
  double max_error = 0;
};

struct GradCheckResult {
  std::vector<ParamCheck> params;
  double max_error = 0;
  double tolerance = 0;
  bool passed = false;
};

// Compares backward() against finite differences of the training-mode loss
// on (batch, labels). The dropout mask is frozen by replaying the same
// generator state for every evaluation.
GradCheckResult check_model(const ModelState<double>& model, const TensorD& batch, const TensorD& labels,
                            std::uint64_t seed, const GradCheckOptions& options = {});

// Fresh net from `seed` (He-scaled weights) and a random batch of
// options.batch images alternating hand/nohand.
GradCheckResult check_network(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& options = {});

// Reduced-input variants of the two architectures that keep every layer:
// 8x8 for shallow, 12x12 for deep.
NetworkSpec gradcheck_spec(NetworkId id);

std::string format_gradcheck(const GradCheckResult& result);

}  // namespace handnet
