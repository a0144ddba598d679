#include "handnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "handnet/data.hpp"

namespace handnet {

TensorD finite_diff(const std::function<double(const TensorD&)>& loss_fn, TensorD param, double eps) {
  if (!(eps > 0)) throw ConfigError("finite difference step must be positive");
  TensorD grad(param.shape(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double w = param[i];
    param[i] = w + eps;
    const double up = loss_fn(param);
    param[i] = w - eps;
    const double down = loss_fn(param);
    param[i] = w;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DivergenceError("non-finite loss while differencing element " + std::to_string(i));
    }
    grad[i] = (up - down) / (2 * eps);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace {

struct Evaluation {
  double loss;
  std::uint64_t signature;
};

Evaluation evaluate_loss(const ModelState<double>& model, const TensorD& batch, const TensorD& labels,
                         std::uint64_t seed) {
  Rng rng(seed);
  const ForwardPass<double> pass = forward(model, batch, /*training=*/true, rng);
  return {softmax_cross_entropy(pass.logits, labels).loss, kink_signature(pass)};
}

std::vector<std::size_t> pick_elements(std::size_t n, std::size_t max_elements, std::uint64_t seed,
                                       const std::string& name) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (n <= max_elements) return all;
  std::seed_seq seq(name.begin(), name.end());
  std::vector<std::uint32_t> mix(2);
  seq.generate(mix.begin(), mix.end());
  Rng rng(seed ^ (std::uint64_t{mix[0]} << 32 | mix[1]));
  std::vector<std::size_t> out;
  std::sample(all.begin(), all.end(), std::back_inserter(out), max_elements, rng);
  return out;
}

}  // namespace

GradCheckResult check_model(const ModelState<double>& model, const TensorD& batch, const TensorD& labels,
                            std::uint64_t seed, const GradCheckOptions& options) {
  if (!(options.tolerance > 0)) throw ConfigError("gradient check tolerance must be positive");
  if (!(options.eps > 0)) throw ConfigError("finite difference step must be positive");
  if (options.ladder == 0) throw ConfigError("gradient check needs at least one step size");
  if (options.max_elements == 0) throw ConfigError("gradient check needs at least one element per tensor");

  const std::uint64_t dropout_seed = seed ^ 0x9E3779B97F4A7C15ULL;
  TensorMap<double> analytic;
  std::uint64_t base_signature = 0;
  {
    Rng rng(dropout_seed);
    const ForwardPass<double> pass = forward(model, batch, /*training=*/true, rng);
    base_signature = kink_signature(pass);
    const auto head = softmax_cross_entropy(pass.logits, labels);
    BackwardOptions bo;
    bo.negate_layer = options.negate_layer;
    analytic = backward(model, pass, softmax_cross_entropy_backward(head.probs, labels), bo);
  }

  GradCheckResult result;
  result.tolerance = options.tolerance;
  ModelState<double> probe = model;
  for (const std::string& name : model.spec.param_names()) {
    ParamCheck pc;
    pc.name = name;
    TensorD& w = probe.params.at(name);
    const TensorD& a = analytic.at(name);
    for (std::size_t i : pick_elements(w.size(), options.max_elements, seed, name)) {
      // Richardson-extrapolated central differences at h and 2h cancel the
      // h^2 error term. The largest kink-free h on the ladder is used: large
      // steps keep roundoff small, small ones survive dense ReLU/pool kinks.
      const double orig = w[i];
      double diff[2] = {0, 0};
      bool kinked = true;
      for (std::size_t rung = 0; rung < options.ladder && kinked; ++rung) {
        const double step = options.eps * std::ldexp(1.0, -static_cast<int>(rung));
        kinked = false;
        for (int k = 0; k < 2 && !kinked; ++k) {
          const double h = step * (k + 1);
          w[i] = orig + h;
          const Evaluation up = evaluate_loss(probe, batch, labels, dropout_seed);
          w[i] = orig - h;
          const Evaluation down = evaluate_loss(probe, batch, labels, dropout_seed);
          w[i] = orig;
          if (!std::isfinite(up.loss) || !std::isfinite(down.loss)) {
            throw DivergenceError("non-finite loss while checking " + name + "[" + std::to_string(i) + "]");
          }
          kinked = up.signature != base_signature || down.signature != base_signature;
          diff[k] = (up.loss - down.loss) / (2 * h);
        }
      }
      if (kinked) {
        ++pc.skipped;
        continue;
      }
      const double numeric = (4 * diff[0] - diff[1]) / 3;
      pc.max_error = std::max(pc.max_error, relative_error(a[i], numeric));
      ++pc.checked;
    }
    result.max_error = std::max(result.max_error, pc.max_error);
    result.params.push_back(std::move(pc));
  }
  result.passed = result.max_error < options.tolerance;
  return result;
}

GradCheckResult check_network(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& options) {
  if (options.batch == 0) throw ConfigError("gradient check batch must be positive");
  FiniteChecksScope checks(true);

  // Unit-variance draws rescaled per tensor to sqrt(2 / fan_in) so that the
  // loss is not flat at the default tiny init.
  ModelState<double> model = init_params<double>(spec, seed, 1.0);
  for (auto& [name, t] : model.params) {
    if (!name.ends_with(".weight")) continue;
    const std::size_t fan_in = t.size() / t.shape()[t.rank() - 1];
    t *= std::sqrt(2.0 / static_cast<double>(fan_in));
  }

  const Shape& in = spec.input_shape;
  TensorD batch(Shape{options.batch, in[0], in[1], in[2]});
  TensorD labels(Shape{options.batch, kNumClasses}, 0.0);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  for (auto& v : batch.data()) v = pixel(rng);
  for (std::size_t n = 0; n < options.batch; ++n) {
    labels[n * kNumClasses + (n % 2 == 0 ? 1 : 0)] = 1.0;
  }
  return check_model(model, batch, labels, seed, options);
}

NetworkSpec gradcheck_spec(NetworkId id) {
  if (id == NetworkId::kShallow) {
    ShallowConfig c;
    c.input_size = 8;
    return build_shallow(c);
  }
  DeepConfig c;
  c.input_size = 12;
  return build_deep(c);
}

std::string format_gradcheck(const GradCheckResult& r) {
  std::string out = "parameter            checked  skipped  max_rel_error\n";
  char line[160];
  for (const auto& p : r.params) {
    std::snprintf(line, sizeof line, "%-20s %7zu  %7zu  %.3e\n", p.name.c_str(), p.checked, p.skipped, p.max_error);
    out += line;
  }
  std::snprintf(line, sizeof line, "max_rel_error=%.3e tolerance=%.1e result=%s\n", r.max_error, r.tolerance,
                r.passed ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace handnet
