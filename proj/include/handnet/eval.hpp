#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "handnet/data.hpp"
#include "handnet/network.hpp"
#include "handnet/train.hpp"

namespace handnet {

// Fraction of rows whose argmax (lowest index on ties) matches the label's.
template <typename T>
double accuracy(const Tensor<T>& probs, const Tensor<T>& labels);

// Inference over `samples` in chunks, returning the accuracy.
double evaluate(const ModelState<float>& model, std::span<const Sample> samples, std::size_t chunk = 64);

struct Summary {
  double mean = 0;
  double std = 0;  // sample estimator (k - 1); 0 for a single value
};

Summary summarize(std::span<const double> values);

struct FoldResult {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double accuracy = 0;
};

struct EvalReport {
  NetworkId network = NetworkId::kShallow;
  Hyperparams hyperparams;
  std::size_t k = 0;
  std::vector<FoldResult> folds;
  double mean = 0;
  double std = 0;

  std::vector<double> accuracies() const;
};

struct CrossValOptions {
  std::size_t jobs = 1;
  // Invoked once per finished fold with its trained model; calls are
  // serialized but arrive in completion order.
  std::function<void(const FoldResult&, const ModelState<float>&)> on_fold_done;
};

// Stratified k-fold over `samples` (fold plan seeded by h.seed). Fold i
// trains from seed h.seed + i. Errors are rethrown with the fold index.
EvalReport cross_validate(std::span<const Sample> samples, const NetworkSpec& spec, const Hyperparams& h,
                          std::size_t k = 10, const CrossValOptions& options = {});

EvalReport cross_validate(const std::filesystem::path& manifest, const NetworkSpec& spec, const Hyperparams& h,
                          std::size_t k = 10, const CrossValOptions& options = {});

// True-positive rate over an all-hand set. Any non-hand sample is a
// ProtocolError.
double positive_test(const ModelState<float>& model, std::span<const Sample> positives);

struct PositiveReport {
  std::vector<double> per_model;
  double mean = 0;
  double std = 0;
};

PositiveReport positive_test(std::span<const ModelState<float>> models, std::span<const Sample> positives);

std::string format_report(const EvalReport& report);
std::string folds_csv(const EvalReport& report);
std::string format_positive_report(const PositiveReport& report, std::span<const std::string> model_names);

}  // namespace handnet
