#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "handnet/eval.hpp"

using namespace handnet;

namespace {

NetworkSpec tiny_spec() {
  ShallowConfig c;
  c.input_size = 16;
  c.conv1_filters = 4;
  c.conv2_filters = 4;
  c.fc_units = 8;
  return build_shallow(c);
}

Hyperparams tiny_hp() {
  Hyperparams h;
  h.epochs = 1;
  h.iters_per_epoch = 3;
  h.batch_size = 4;
  h.seed = 5;
  return h;
}

// fc2 bias dominates the output, so the model predicts one class always.
ModelState<float> constant_model(Label label) {
  auto m = init_params<float>(tiny_spec(), 0);
  auto& b = m.params.at("fc2.bias");
  b[0] = label == Label::kNoHand ? 50.0f : -50.0f;
  b[1] = -b[0];
  return m;
}

std::vector<Sample> all_hand(std::size_t n) {
  std::vector<Sample> out;
  for (auto& s : synth_dataset(2 * n, 4, 16))
    if (label_of(s.label) == Label::kHand) out.push_back(std::move(s));
  return out;
}

}  // namespace

TEST(Accuracy, Examples) {
  const TensorF labels = TensorF::from(Shape{3, 2}, {1, 0, 0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(accuracy(labels, labels), 1.0);
  const TensorF probs = TensorF::from(Shape{3, 2}, {0.6f, 0.4f, 0.3f, 0.7f, 0.5f, 0.5f});
  EXPECT_DOUBLE_EQ(accuracy(probs, labels), 2.0 / 3.0);
  const TensorF half = TensorF::from(Shape{2, 2}, {1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(accuracy(half, TensorF::from(Shape{2, 2}, {1, 0, 0, 1})), 0.5);
  EXPECT_THROW(accuracy(probs, TensorF(Shape{2, 2})), UsageError);
}

TEST(Accuracy, InvariantUnderRowRescaling) {
  const TensorD labels = TensorD::from(Shape{3, 2}, {1, 0, 0, 1, 0, 1});
  TensorD probs = TensorD::from(Shape{3, 2}, {0.6, 0.4, 0.3, 0.7, 0.8, 0.2});
  const double before = accuracy(probs, labels);
  for (std::size_t r = 0; r < 3; ++r) {
    probs[2 * r] *= 3.0 + r;
    probs[2 * r + 1] *= 3.0 + r;
  }
  EXPECT_EQ(accuracy(probs, labels), before);
}

TEST(Summary, Examples) {
  const std::vector<double> ones(10, 1.0);
  EXPECT_DOUBLE_EQ(summarize(ones).mean, 1.0);
  EXPECT_DOUBLE_EQ(summarize(ones).std, 0.0);
  const std::vector<double> two{0.9, 1.0};
  EXPECT_NEAR(summarize(two).mean, 0.95, 1e-15);
  EXPECT_NEAR(summarize(two).std, 0.0707107, 1e-6);
  const std::vector<double> one{0.4};
  EXPECT_EQ(summarize(one).std, 0.0);
}

TEST(CrossValidate, EachSampleTestedOnceAndReportConsistent) {
  const auto data = synth_dataset(24, 2, 16);
  std::vector<std::size_t> tested;
  CrossValOptions opt;
  const auto report = cross_validate(data, tiny_spec(), tiny_hp(), 3, opt);
  ASSERT_EQ(report.folds.size(), 3u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& f = report.folds[i];
    EXPECT_EQ(f.fold, i);
    EXPECT_EQ(f.seed, tiny_hp().seed + i);
    EXPECT_EQ(f.n_test, 8u);
    EXPECT_EQ(f.n_train, 16u);
    EXPECT_GE(f.accuracy, 0.0);
    EXPECT_LE(f.accuracy, 1.0);
    total += f.n_test;
  }
  EXPECT_EQ(total, data.size());
  const auto acc = report.accuracies();
  EXPECT_NEAR(report.mean, summarize(acc).mean, 1e-12);
  EXPECT_NEAR(report.std, summarize(acc).std, 1e-12);
  const std::string csv = folds_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fold,accuracy,seed");
  EXPECT_NE(format_report(report).find("k=3"), std::string::npos);
}

TEST(CrossValidate, JobsDoNotChangeResults) {
  const auto data = synth_dataset(24, 2, 16);
  CrossValOptions one, two;
  two.jobs = 2;
  std::set<std::size_t> seen;
  two.on_fold_done = [&](const FoldResult& r, const ModelState<float>& m) {
    seen.insert(r.fold);
    EXPECT_EQ(m.step, tiny_hp().total_iterations());
  };
  const auto a = cross_validate(data, tiny_spec(), tiny_hp(), 3, one);
  const auto b = cross_validate(data, tiny_spec(), tiny_hp(), 3, two);
  EXPECT_EQ(a.accuracies(), b.accuracies());
  EXPECT_EQ(seen.size(), 3u);
}

TEST(CrossValidate, ErrorsCarryFoldIndex) {
  const auto data = synth_dataset(24, 2, 16);
  Hyperparams h = tiny_hp();
  h.base_lr = 1e30;
  h.iters_per_epoch = 30;
  try {
    cross_validate(data, tiny_spec(), h, 3);
    GTEST_SKIP() << "did not diverge";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("fold ", 0), 0u) << e.what();
  }
}

TEST(PositiveTest, ConstantModels) {
  const auto positives = all_hand(6);
  ASSERT_EQ(positives.size(), 6u);
  EXPECT_DOUBLE_EQ(positive_test(constant_model(Label::kHand), positives), 1.0);
  EXPECT_DOUBLE_EQ(positive_test(constant_model(Label::kNoHand), positives), 0.0);
  const std::vector<ModelState<float>> models{constant_model(Label::kHand), constant_model(Label::kNoHand)};
  const auto rep = positive_test(models, positives);
  EXPECT_EQ(rep.per_model, (std::vector<double>{1.0, 0.0}));
  EXPECT_DOUBLE_EQ(rep.mean, 0.5);
}

TEST(PositiveTest, NegativeSampleIsProtocolError) {
  const auto mixed = synth_dataset(4, 1, 16);
  EXPECT_THROW(positive_test(constant_model(Label::kHand), mixed), ProtocolError);
  EXPECT_THROW(positive_test(constant_model(Label::kHand), std::span<const Sample>{}), UsageError);
}
