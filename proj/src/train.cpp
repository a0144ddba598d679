#include "handnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace handnet {

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("hyperparameter " + what); };
  if (!(base_lr > 0)) fail("base_lr must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must be in (0, 1]");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) fail("dropout_rate must be in [0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (iters_per_epoch == 0) fail("iters_per_epoch must be positive");
  if (!(adam_beta1 > 0 && adam_beta1 < 1)) fail("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0 && adam_beta2 < 1)) fail("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(init_std > 0)) fail("init_std must be positive");
}

double lr_schedule(const Hyperparams& h, std::size_t epoch) {
  if (epoch >= h.epochs) {
    throw UsageError("epoch " + std::to_string(epoch) + " outside schedule of " + std::to_string(h.epochs));
  }
  double lr = h.base_lr;
  for (std::size_t e = 0; e < epoch; ++e) lr *= h.lr_decay;
  return lr;
}

std::string trace_to_csv(const LossTrace& trace) {
  std::string out = "iteration,epoch,lr,loss\n";
  char line[128];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g\n", r.iteration, r.epoch, r.lr, r.loss);
    out += line;
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const LossTrace& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << trace_to_csv(trace);
}

template <typename T>
void adam_step(ModelState<T>& state, const TensorMap<T>& grads, double lr, const Hyperparams& h) {
  if (grads.size() != state.params.size()) {
    throw UsageError("gradient map has " + std::to_string(grads.size()) + " entries, model has " +
                     std::to_string(state.params.size()));
  }
  for (const auto& [name, g] : grads) {
    const auto it = state.params.find(name);
    if (it == state.params.end()) throw UsageError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw UsageError("gradient '" + name + "' has shape " + g.shape().str() + ", parameter has " +
                       it->second.shape().str());
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(h.adam_beta1);
  const T b2 = static_cast<T>(h.adam_beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(h.adam_beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(h.adam_beta2, t));
  const T step = static_cast<T>(lr);
  const T eps = static_cast<T>(h.adam_eps);

  for (auto& [name, w] : state.params) {
    const Tensor<T>& g = grads.at(name);
    Tensor<T>& m = state.adam_m.at(name);
    Tensor<T>& v = state.adam_v.at(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      w[i] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
LossTrace train_from(ModelState<T>& model, std::span<const Sample> train_set, const Hyperparams& h,
                     const TrainObserver<T>& observer) {
  h.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  for (const auto& s : train_set) validate_onehot(s.label.reshaped(Shape{1, s.label.size()}));

  // Dropout masks come from their own stream so they do not perturb the shuffles.
  std::seed_seq dropout_seq{static_cast<std::uint32_t>(h.seed), static_cast<std::uint32_t>(h.seed >> 32), 0xD0u};
  Rng dropout_rng(dropout_seq);

  LossTrace trace;
  trace.reserve(h.total_iterations());
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < h.epochs; ++epoch) {
    const double lr = lr_schedule(h, epoch);
    const auto plan = batches(train_set.size(), h.batch_size, h.seed, epoch, h.iters_per_epoch);
    for (const auto& indices : plan) {
      ++iteration;
      const Batch b = gather_batch(train_set, indices);
      LossAndGrads<T> lg;
      try {
        lg = loss_and_gradients(model, to_precision<T>(b.images), to_precision<T>(b.labels), dropout_rng);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at iteration " + std::to_string(iteration) + ": " + e.what());
      }
      if (!std::isfinite(static_cast<double>(lg.loss))) {
        throw DivergenceError("non-finite loss at iteration " + std::to_string(iteration));
      }
      adam_step(model, lg.grads, lr, h);
      trace.push_back({iteration, epoch, lr, static_cast<double>(lg.loss)});
      if (observer && !observer(trace.back(), model)) return trace;
    }
  }
  return trace;
}

template <typename T>
TrainResult<T> train(const NetworkSpec& spec, std::span<const Sample> train_set, const Hyperparams& h,
                     const TrainObserver<T>& observer) {
  h.validate();
  TrainResult<T> result{init_params<T>(with_dropout(spec, h.dropout_rate), h.seed, h.init_std), {}};
  result.trace = train_from(result.model, train_set, h, observer);
  return result;
}

#define HANDNET_INSTANTIATE(T)                                                                          \
  template void adam_step<T>(ModelState<T>&, const TensorMap<T>&, double, const Hyperparams&);           \
  template LossTrace train_from<T>(ModelState<T>&, std::span<const Sample>, const Hyperparams&,          \
                                   const TrainObserver<T>&);                                             \
  template TrainResult<T> train<T>(const NetworkSpec&, std::span<const Sample>, const Hyperparams&,       \
                                   const TrainObserver<T>&);

HANDNET_INSTANTIATE(float)
HANDNET_INSTANTIATE(double)

#undef HANDNET_INSTANTIATE

}  // namespace handnet
