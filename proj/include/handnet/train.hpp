#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "handnet/data.hpp"
#include "handnet/network.hpp"

namespace handnet {

// Training configuration. Defaults reproduce the reference protocol:
// Adam at 1e-4 decayed by 0.8 per epoch, 15 epochs of 112 batches of 32.
struct Hyperparams {
  double base_lr = 1e-4;
  double lr_decay = 0.8;
  double dropout_rate = 0.4;
  std::size_t batch_size = 32;
  std::size_t epochs = 15;
  std::size_t iters_per_epoch = 112;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_std = 0.005;
  std::uint64_t seed = 0;

  std::size_t total_iterations() const noexcept { return epochs * iters_per_epoch; }
  // Throws ConfigError on any out-of-range field.
  void validate() const;
};

// base_lr * lr_decay^epoch; UsageError unless 0 <= epoch < epochs.
double lr_schedule(const Hyperparams& h, std::size_t epoch);

struct TraceRecord {
  std::size_t iteration = 0;  // 1-based
  std::size_t epoch = 0;      // 0-based
  double lr = 0;
  double loss = 0;
};

using LossTrace = std::vector<TraceRecord>;

// `iteration,epoch,lr,loss` with round-trip precision.
std::string trace_to_csv(const LossTrace& trace);
void write_trace_csv(const std::filesystem::path& path, const LossTrace& trace);

// One Adam update in place: t <- t+1, moment updates, bias-corrected step.
template <typename T>
void adam_step(ModelState<T>& state, const TensorMap<T>& grads, double lr, const Hyperparams& h = {});

template <typename T>
struct TrainResult {
  ModelState<T> model;
  LossTrace trace;
};

// Called after every iteration; returning false stops training early.
template <typename T>
using TrainObserver = std::function<bool(const TraceRecord&, const ModelState<T>&)>;

// Initializes from h.seed and runs epochs x iters_per_epoch Adam steps. The
// dropout rate of `spec` is replaced by h.dropout_rate. Throws DataError on an
// empty set and DivergenceError naming the iteration on a non-finite loss.
template <typename T>
TrainResult<T> train(const NetworkSpec& spec, std::span<const Sample> train_set, const Hyperparams& h,
                     const TrainObserver<T>& observer = {});

// Continues training an existing state (moments and step count included).
template <typename T>
LossTrace train_from(ModelState<T>& model, std::span<const Sample> train_set, const Hyperparams& h,
                     const TrainObserver<T>& observer = {});

template <typename T>
Tensor<T> to_precision(const TensorF& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return t.template cast<T>();
  }
}

}  // namespace handnet
