// Acceptance run: one PASS/FAIL line per criterion. Criterion 8 needs the
// real datasets and is reported as SKIP.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "handnet/bench.hpp"
#include "handnet/checkpoint.hpp"
#include "handnet/data.hpp"
#include "handnet/eval.hpp"
#include "handnet/gradcheck.hpp"
#include "handnet/train.hpp"
#include "oracles.hpp"

using namespace handnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int sh(const std::string& args) {
  const std::string cmd = std::string(HANDNET_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 1. gradient fidelity
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int runs = 0, passed = 0;
  for (auto id : {NetworkId::kShallow, NetworkId::kDeep}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = check_network(gradcheck_spec(id), seed);
      ++runs;
      passed += r.passed;
      worst = std::max(worst, r.max_error);
      std::cout << "  gradcheck " << to_string(id) << " seed " << seed << " max_rel_error=" << r.max_error << '\n';
    }
  }
  const double check_s = seconds_since(t0);

  // sign-flip mutation of every layer's backward, one seed
  std::size_t mutants = 0, caught = 0;
  double weakest = 1e9;
  for (auto id : {NetworkId::kShallow, NetworkId::kDeep}) {
    const auto spec = gradcheck_spec(id);
    for (std::size_t layer = 0; layer < spec.layers.size(); ++layer) {
      GradCheckOptions opt;
      opt.max_elements = id == NetworkId::kShallow ? 4 : 2;
      opt.negate_layer = layer;
      const auto r = check_network(spec, 11, opt);
      ++mutants;
      caught += r.max_error > 0.1;
      weakest = std::min(weakest, r.max_error);
    }
  }
  const double total_s = seconds_since(t0);
  Outcome o;
  o.pass = passed == runs && caught == mutants && total_s < 300;
  o.detail = fmt("%d/%d checks within 1e-4 (max %.2e), %zu/%zu mutants detected (min error %.3f), %.0f s + %.0f s",
                 passed, runs, worst, caught, mutants, weakest, check_s, total_s - check_s);
  return o;
}

// 2. protocol arithmetic
Outcome protocol() {
  const Hyperparams h;
  bool ok = lr_schedule(h, 0) == 1e-4 && std::abs(lr_schedule(h, 1) - 8e-5) < 1e-20 && h.total_iterations() == 1680;
  std::vector<Label> labels(4000);
  for (std::size_t i = 0; i < 4000; ++i) labels[i] = i < 2000 ? Label::kHand : Label::kNoHand;
  const auto plan = make_folds(labels, 10, 0);
  ok = ok && plan.folds.size() == 10;
  for (const auto& f : plan.folds) {
    std::size_t hands = 0;
    for (auto i : f.test) hands += labels[i] == Label::kHand;
    ok = ok && f.train.size() == 3600 && f.test.size() == 400 && hands == 200;
  }
  return {ok, fmt("lr(0)=%g lr(1)=%g iterations=%zu folds 3600/400 with 200+200", lr_schedule(h, 0),
                  lr_schedule(h, 1), h.total_iterations())};
}

// 3. normalization chain
Outcome normalization() {
  const HardwareProfile ours{"ours", 26.5e9, 1}, theirs{"theirs", 11e12, 3072};
  const double best = best_case_time(8000, 500, 600, true);
  const auto c = normalize_comparison(4.31, ours, best, theirs, true);
  const double exact_best = best_case_time(8000, 500, 600);
  const auto e = normalize_comparison(4.31, ours, best, theirs);
  const bool ok = best == 0.03 && c.throughput_ratio == 415 && c.total_ratio == 1274880 &&
                  std::abs(c.theirs_normalized_ms - 38246.4) < 1e-6 && std::abs(c.speedup - 8873.87) <= 0.05 &&
                  std::abs(exact_best - 0.026667) < 1e-6 && std::abs(e.throughput_ratio - 415.094) < 1e-3;
  return {ok, fmt("0.03 / %.0f / %.0f / %.1f ms / %.2f; exact %.6f / %.3f", c.throughput_ratio, c.total_ratio,
                  c.theirs_normalized_ms, c.speedup, exact_best, e.throughput_ratio)};
}

// 4. learning capability; training stops as soon as train accuracy hits 1.0
Outcome learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = build_shallow();
  int reached = 0, decreasing = 0;
  std::string per_seed;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto data = synth_dataset(32, 1000 + s);
    Hyperparams h;
    h.seed = s;
    h.epochs = 1;
    h.iters_per_epoch = 200;
    std::size_t hit = 0;
    const TrainObserver<float> obs = [&](const TraceRecord& r, const ModelState<float>& m) {
      if (r.iteration >= 20 && r.iteration % 5 == 0 && evaluate(m, data) == 1.0) {
        hit = r.iteration;
        return false;
      }
      return true;
    };
    const auto res = train<float>(spec, data, h, obs);
    const auto& tr = res.trace;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      first += tr[i].loss;
      last += tr[tr.size() - 10 + i].loss;
    }
    reached += hit > 0;
    decreasing += last < first;
    per_seed += fmt(" %zu", hit);
  }
  const double secs = seconds_since(t0);
  return {reached >= 9 && decreasing >= 9 && secs < 120,
          fmt("%d/10 seeds reach 1.0 (iterations:%s), loss falls in %d/10, %.0f s", reached, per_seed.c_str(),
              decreasing, secs)};
}

// 5. determinism through the command line
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("handnet_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  bool ok = sh("make-synth --n 40 --seed 5 --out " + (root / "data").string()) == 0;
  const std::string m = (root / "data" / "manifest.csv").string();
  const std::string train_args = "train --manifest " + m + " --seed 3 --epochs 2 --iters 5 --batch-size 8 --out ";
  ok = ok && sh(train_args + (root / "a").string()) == 0 && sh(train_args + (root / "b").string()) == 0;
  const bool same_ckpt = ok && slurp(root / "a" / "model.hfck") == slurp(root / "b" / "model.hfck") &&
                         !slurp(root / "a" / "model.hfck").empty();
  const bool same_csv = ok && slurp(root / "a" / "loss.csv") == slurp(root / "b" / "loss.csv");
  const std::string cv_args = "crossval --manifest " + m + " --k 4 --seed 2 --epochs 1 --iters 3 --batch-size 8 ";
  ok = ok && sh(cv_args + "--jobs 1 --out " + (root / "cv1").string()) == 0 &&
       sh(cv_args + "--jobs 4 --out " + (root / "cv4").string()) == 0;
  const std::string f1 = slurp(root / "cv1" / "folds.csv");
  const bool same_cv = ok && f1 == slurp(root / "cv4" / "folds.csv") && !f1.empty();
  fs::remove_all(root);
  return {same_ckpt && same_csv && same_cv,
          fmt("checkpoint %s, loss csv %s, crossval jobs 1 vs 4 %s", same_ckpt ? "identical" : "differs",
              same_csv ? "identical" : "differs", same_cv ? "identical" : "differs")};
}

// 6. latency ordering
Outcome latency() {
  const auto shallow = init_params<float>(build_shallow(), 0);
  const auto deep = init_params<float>(build_deep(), 0);
  const auto rs = measure_latency(shallow, 10, 100);
  const auto rd = measure_latency(deep, 10, 100);
  const auto fs_ = count_flops(shallow.spec), fd = count_flops(deep.spec);
  return {rs.mean_ms < rd.mean_ms && fd > fs_,
          fmt("shallow %.3f ms (%.1f fps) < deep %.3f ms (%.1f fps); flops %llu < %llu", rs.mean_ms, rs.fps,
              rd.mean_ms, rd.fps, static_cast<unsigned long long>(fs_), static_cast<unsigned long long>(fd))};
}

// 7. layer oracles and checkpoint round trip
Outcome oracles() {
  // 64-bit forward against the direct sum, absolute; fp32 relative to max(1, |ref|)
  double conv_err = 0, conv32_rel = 0, pool_err = 0, row_err = 0;
  std::uint64_t seed = 1;
  for (std::size_t hw = 1; hw <= 8; ++hw)
    for (std::size_t c = 1; c <= 3; ++c) {
      const auto x = oracle::random_tensor<double>(Shape{2, hw, hw, c}, ++seed);
      for (std::size_t k : {1u, 3u, 5u}) {
        const std::size_t pad = k / 2;
        const auto ker = oracle::random_tensor<double>(Shape{k, k, c, 4}, ++seed);
        const auto b = oracle::random_tensor<double>(Shape{4}, ++seed);
        for (std::size_t stride : {1u, 2u}) {
          const auto ref = oracle::conv2d(x, ker, b, stride, pad);
          const auto got = conv2d_forward(x, ConvParams<double>{ker, b, stride, pad});
          for (std::size_t i = 0; i < got.size(); ++i) conv_err = std::max(conv_err, std::abs(got[i] - ref[i]));
          const auto got32 = conv2d_forward(x.cast<float>(), ConvParams<float>{ker.cast<float>(), b.cast<float>(), stride, pad});
          const auto ref32 = oracle::conv2d(x.cast<float>(), ker.cast<float>(), b.cast<float>(), stride, pad);
          for (std::size_t i = 0; i < got32.size(); ++i)
            conv32_rel = std::max(conv32_rel, std::abs(double(got32[i]) - ref32[i]) / std::max(1.0, std::abs(double(ref32[i]))));
        }
      }
      const auto xf = x.cast<float>();
      for (std::size_t window : {2u, 3u}) {
        if (window > hw) continue;
        const auto got = maxpool_forward(xf, window, 2);
        const auto ref = oracle::maxpool(xf, window, 2);
        if (got.shape() != ref.shape()) pool_err = 1e9;
        else
          for (std::size_t i = 0; i < got.size(); ++i) pool_err = std::max(pool_err, double(std::abs(got[i] - ref[i])));
      }
    }
  const auto logits = oracle::random_tensor<float>(Shape{64, 2}, 77, -30, 30);
  const auto p = softmax(logits);
  for (std::size_t r = 0; r < 64; ++r) row_err = std::max(row_err, std::abs(double(p[2 * r]) + p[2 * r + 1] - 1.0));

  auto model = init_params<float>(build_shallow(), 4);
  model.step = 77;
  for (auto& [name, t] : model.adam_m) t.fill(0.125f);
  const std::string a = encode_checkpoint(model);
  const std::string b = encode_checkpoint(decode_checkpoint(a, build_shallow()));
  const bool round_trip = a == b;
  return {conv_err <= 1e-6 && conv32_rel <= 1e-6 && pool_err <= 1e-6 && row_err <= 1e-6 && round_trip,
          fmt("conv max |diff| %.1e (fp32 rel %.1e), pool %.1e, softmax row sums %.1e, checkpoint round trip %s", conv_err,
              conv32_rel, pool_err,
              row_err, round_trip ? "bitwise" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradients}, {2, protocol}, {3, normalization}, {4, learning},
      {5, determinism}, {6, latency}, {7, oracles}};
  int failures = 0;
  for (const auto& [n, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
  }
  std::cout << "criterion 8: SKIP (operator-run on the real hand datasets, not part of CI)" << std::endl;
  return failures == 0 ? 0 : 1;
}
