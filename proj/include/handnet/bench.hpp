#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "handnet/network.hpp"

namespace handnet {

// A machine's peak floating-point throughput and the number of execution
// units it brings to bear.
struct HardwareProfile {
  std::string name;
  double throughput = 0;  // floating-point operations per second
  std::size_t cores = 1;

  void validate() const;
};

// Text key/value file: name=, gflops=, cores=. Blank lines and '#' comments
// are ignored; anything else malformed is a ConfigError.
HardwareProfile parse_profile(const std::string& text, const std::string& source = "profile");
HardwareProfile load_profile(const std::filesystem::path& path);
std::string format_profile(const HardwareProfile& profile);

// Monotonic time in milliseconds.
using Clock = std::function<double()>;
Clock steady_clock_ms();

struct BenchReport {
  NetworkId network = NetworkId::kShallow;
  std::size_t n_warmup = 0;
  std::size_t n_runs = 0;
  std::vector<double> latencies_ms;
  double mean_ms = 0;
  double std_ms = 0;  // sample estimator
  double fps = 0;
  std::uint64_t flops_per_image = 0;
};

// Times n_warmup + n_runs single-image inference passes with `clock`,
// discarding the warmups. The finiteness validator is off while timing.
// Without an image, a fixed mid-gray input is used.
BenchReport measure_latency(const ModelState<float>& model, std::size_t n_warmup, std::size_t n_runs,
                            const Clock& clock = steady_clock_ms(), const std::optional<TensorF>& image = {});

// Per single-image forward pass:
//   conv: 2*kh*kw*Cin*Cout*Hout*Wout + Cout*Hout*Wout
//   fc:   2*In*Out + Out
//   relu 1, maxpool window^2, lrn (2n + 3) and softmax 3 per output element;
//   flatten and inference-time dropout are free.
std::uint64_t count_flops(const NetworkSpec& spec);
std::uint64_t count_flops(const LayerDesc& layer);

// reported_ms / (search_w * search_h); paper_compat rounds to 2 decimals.
double best_case_time(double reported_ms, double search_w, double search_h, bool paper_compat = false);

struct Comparison {
  double throughput_ratio = 0;  // theirs / ours, integer in paper-compat mode
  double total_ratio = 0;       // throughput_ratio * theirs.cores / ours.cores
  double theirs_normalized_ms = 0;
  double speedup = 0;           // theirs_normalized_ms / ours_ms
};

Comparison normalize_comparison(double ours_ms, const HardwareProfile& ours, double theirs_ms,
                                const HardwareProfile& theirs, bool paper_compat = false);

double fps(double mean_latency_ms);

std::string format_bench_report(const BenchReport& report);
std::string latencies_csv(const BenchReport& report);
std::string format_comparison(const Comparison& c, double ours_ms, const HardwareProfile& ours, double theirs_ms,
                              const HardwareProfile& theirs, bool paper_compat);

}  // namespace handnet
