#include "handnet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace handnet {

namespace {

template <typename T>
std::size_t count_correct(const Tensor<T>& probs, const Tensor<T>& labels) {
  if (probs.rank() != 2 || labels.rank() != 2) throw UsageError("accuracy expects N x K tensors");
  if (probs.shape() != labels.shape()) {
    throw UsageError("accuracy: predictions " + probs.shape().str() + " vs labels " + labels.shape().str());
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::span<const T> p(probs.raw() + r * k, k);
    const std::span<const T> y(labels.raw() + r * k, k);
    if (argmax(p) == argmax(y)) ++correct;
  }
  return correct;
}

}  // namespace

template <typename T>
double accuracy(const Tensor<T>& probs, const Tensor<T>& labels) {
  return static_cast<double>(count_correct(probs, labels)) / static_cast<double>(probs.dim(0));
}

template double accuracy<float>(const TensorF&, const TensorF&);
template double accuracy<double>(const TensorD&, const TensorD&);

double evaluate(const ModelState<float>& model, std::span<const Sample> samples, std::size_t chunk) {
  if (samples.empty()) throw UsageError("cannot evaluate on an empty set");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = gather_batch(samples, idx);
    correct += count_correct(predict(model, b.images), b.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  double total = 0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<double> EvalReport::accuracies() const {
  std::vector<double> out;
  for (const auto& f : folds) out.push_back(f.accuracy);
  return out;
}

namespace {

// Rethrows the captured error with a prefix while keeping its family.
[[noreturn]] void rethrow_with_prefix(std::exception_ptr ep, const std::string& prefix) {
  try {
    std::rethrow_exception(ep);
  } catch (const ProtocolError& e) {
    throw ProtocolError(prefix + e.what());
  } catch (const UsageError& e) {
    throw UsageError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(prefix + e.what());
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const MismatchError& e) {
    throw MismatchError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

EvalReport cross_validate(std::span<const Sample> samples, const NetworkSpec& spec, const Hyperparams& h,
                          std::size_t k, const CrossValOptions& options) {
  h.validate();
  const std::vector<Label> labels = labels_of(samples);
  const FoldPlan plan = make_folds(labels, k, h.seed);

  EvalReport report;
  report.network = spec.id;
  report.hyperparams = h;
  report.k = k;
  report.folds.resize(k);
  std::vector<std::exception_ptr> errors(k);
  std::mutex callback_mutex;

  auto run_fold = [&](std::size_t f) {
    try {
      const Fold& fold = plan.folds[f];
      std::vector<Sample> train_set, test_set;
      train_set.reserve(fold.train.size());
      test_set.reserve(fold.test.size());
      for (std::size_t i : fold.train) train_set.push_back(samples[i]);
      for (std::size_t i : fold.test) test_set.push_back(samples[i]);

      Hyperparams fold_h = h;
      fold_h.seed = h.seed + f;
      const TrainResult<float> trained = train<float>(spec, train_set, fold_h);
      FoldResult& r = report.folds[f];
      r.fold = f;
      r.seed = fold_h.seed;
      r.n_train = train_set.size();
      r.n_test = test_set.size();
      r.accuracy = evaluate(trained.model, test_set);
      if (options.on_fold_done) {
        std::lock_guard lock(callback_mutex);
        options.on_fold_done(r, trained.model);
      }
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, k);
  if (jobs == 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) run_fold(f);
      });
    }
  }

  for (std::size_t f = 0; f < k; ++f) {
    if (errors[f]) rethrow_with_prefix(errors[f], "fold " + std::to_string(f) + ": ");
  }
  const auto acc = report.accuracies();
  const Summary s = summarize(acc);
  report.mean = s.mean;
  report.std = s.std;
  return report;
}

EvalReport cross_validate(const std::filesystem::path& manifest, const NetworkSpec& spec, const Hyperparams& h,
                          std::size_t k, const CrossValOptions& options) {
  const auto entries = load_manifest(manifest);
  const auto samples = load_samples(entries, manifest.parent_path(), spec.input_shape[0]);
  return cross_validate(samples, spec, h, k, options);
}

double positive_test(const ModelState<float>& model, std::span<const Sample> positives) {
  if (positives.empty()) throw UsageError("positive test needs at least one sample");
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (label_of(positives[i].label) != Label::kHand) {
      throw ProtocolError("positive test sample " + std::to_string(i) + " is not labelled hand");
    }
  }
  return evaluate(model, positives);
}

PositiveReport positive_test(std::span<const ModelState<float>> models, std::span<const Sample> positives) {
  if (models.empty()) throw UsageError("positive test needs at least one model");
  PositiveReport report;
  for (const auto& m : models) report.per_model.push_back(positive_test(m, positives));
  const Summary s = summarize(report.per_model);
  report.mean = s.mean;
  report.std = s.std;
  return report;
}

// ---------------------------------------------------------------------------
// Reports

std::string format_report(const EvalReport& r) {
  const Hyperparams& h = r.hyperparams;
  std::ostringstream out;
  out.precision(17);
  out << "network=" << to_string(r.network) << '\n'
      << "k=" << r.k << '\n'
      << "mean_accuracy=" << r.mean << '\n'
      << "std_accuracy=" << r.std << '\n'
      << "std_estimator=sample\n"
      << "seed=" << h.seed << '\n'
      << "base_lr=" << h.base_lr << '\n'
      << "lr_decay=" << h.lr_decay << '\n'
      << "dropout_rate=" << h.dropout_rate << '\n'
      << "batch_size=" << h.batch_size << '\n'
      << "epochs=" << h.epochs << '\n'
      << "iters_per_epoch=" << h.iters_per_epoch << '\n'
      << "adam_beta1=" << h.adam_beta1 << '\n'
      << "adam_beta2=" << h.adam_beta2 << '\n'
      << "adam_eps=" << h.adam_eps << '\n'
      << "init_std=" << h.init_std << '\n'
      << '\n'
      << "fold  seed  n_train  n_test  accuracy\n";
  char line[128];
  for (const auto& f : r.folds) {
    std::snprintf(line, sizeof line, "%4zu  %4llu  %7zu  %6zu  %.6f\n", f.fold,
                  static_cast<unsigned long long>(f.seed), f.n_train, f.n_test, f.accuracy);
    out << line;
  }
  return out.str();
}

std::string folds_csv(const EvalReport& r) {
  std::string out = "fold,accuracy,seed\n";
  char line[96];
  for (const auto& f : r.folds) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%llu\n", f.fold, f.accuracy, static_cast<unsigned long long>(f.seed));
    out += line;
  }
  return out;
}

std::string format_positive_report(const PositiveReport& r, std::span<const std::string> model_names) {
  std::ostringstream out;
  out.precision(17);
  out << "mean_tpr=" << r.mean << '\n'
      << "std_tpr=" << r.std << '\n'
      << "models=" << r.per_model.size() << '\n'
      << '\n'
      << "model,tpr\n";
  for (std::size_t i = 0; i < r.per_model.size(); ++i) {
    out << (i < model_names.size() ? model_names[i] : std::to_string(i)) << ',' << r.per_model[i] << '\n';
  }
  return out.str();
}

}  // namespace handnet
