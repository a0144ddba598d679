#include "handnet/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fileutil.hpp"

namespace handnet {

void HardwareProfile::validate() const {
  if (!(throughput > 0) || !std::isfinite(throughput)) {
    throw ConfigError("hardware profile '" + name + "' needs a positive throughput");
  }
  if (cores < 1) throw ConfigError("hardware profile '" + name + "' needs cores >= 1");
}

HardwareProfile parse_profile(const std::string& text, const std::string& source) {
  HardwareProfile p;
  bool have_name = false, have_gflops = false, have_cores = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    const auto eq = line.find('=');
    const std::string at = source + " line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(at + "expected key=value");
    const std::string key = line.substr(0, line.find_last_not_of(" \t", eq - 1) + 1);
    std::string value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    try {
      std::size_t used = 0;
      if (key == "name") {
        p.name = value;
        have_name = true;
      } else if (key == "gflops") {
        p.throughput = std::stod(value, &used) * 1e9;
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        have_gflops = true;
      } else if (key == "cores") {
        const long long c = std::stoll(value, &used);
        if (used != value.size() || c < 1) throw std::invalid_argument("cores");
        p.cores = static_cast<std::size_t>(c);
        have_cores = true;
      } else {
        throw ConfigError(at + "unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError(at + "bad value '" + value + "' for " + key);
    }
  }
  if (!have_name || !have_gflops || !have_cores) {
    throw ConfigError(source + ": profile needs name=, gflops= and cores=");
  }
  p.validate();
  return p;
}

HardwareProfile load_profile(const std::filesystem::path& path) {
  return parse_profile(detail::read_file<ConfigError>(path), path.string());
}

std::string format_profile(const HardwareProfile& p) {
  std::ostringstream out;
  out.precision(17);
  out << "name=" << p.name << "\ngflops=" << p.throughput / 1e9 << "\ncores=" << p.cores << '\n';
  return out.str();
}

Clock steady_clock_ms() {
  return [] {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
  };
}

BenchReport measure_latency(const ModelState<float>& model, std::size_t n_warmup, std::size_t n_runs,
                            const Clock& clock, const std::optional<TensorF>& image) {
  if (n_runs == 0) throw ConfigError("latency measurement needs at least one run");
  const Shape& in = model.spec.input_shape;
  const TensorF input = image ? image->reshaped(Shape{1, in[0], in[1], in[2]})
                              : TensorF(Shape{1, in[0], in[1], in[2]}, 0.5f);

  FiniteChecksScope no_checks(false);
  BenchReport report;
  report.network = model.spec.id;
  report.n_warmup = n_warmup;
  report.n_runs = n_runs;
  report.flops_per_image = count_flops(model.spec);
  for (std::size_t i = 0; i < n_warmup + n_runs; ++i) {
    const double t0 = clock();
    const TensorF probs = predict(model, input);
    const double t1 = clock();
    if (i >= n_warmup) report.latencies_ms.push_back(t1 - t0);
  }
  double total = 0;
  for (double v : report.latencies_ms) total += v;
  report.mean_ms = total / static_cast<double>(n_runs);
  if (n_runs > 1) {
    double sq = 0;
    for (double v : report.latencies_ms) sq += (v - report.mean_ms) * (v - report.mean_ms);
    report.std_ms = std::sqrt(sq / static_cast<double>(n_runs - 1));
  }
  report.fps = fps(report.mean_ms);
  return report;
}

std::uint64_t count_flops(const LayerDesc& l) {
  const std::uint64_t out = l.out_shape.numel();
  switch (l.kind) {
    case LayerKind::kConv: {
      const std::uint64_t positions = l.out_shape[0] * l.out_shape[1];
      return 2ULL * l.kernel * l.kernel * l.in_shape[2] * l.filters * positions + l.filters * positions;
    }
    case LayerKind::kFullyConnected:
      return 2ULL * l.in_shape[0] * l.units + l.units;
    case LayerKind::kRelu:
      return out;
    case LayerKind::kMaxPool:
      return static_cast<std::uint64_t>(l.window) * l.window * out;
    case LayerKind::kLrn:
      return (2ULL * l.lrn.depth_radius + 3) * out;
    case LayerKind::kSoftmax:
      return 3ULL * out;
    case LayerKind::kFlatten:
    case LayerKind::kDropout:
      return 0;
  }
  return 0;
}

std::uint64_t count_flops(const NetworkSpec& spec) {
  std::uint64_t total = 0;
  for (const auto& l : spec.layers) total += count_flops(l);
  return total;
}

double best_case_time(double reported_ms, double search_w, double search_h, bool paper_compat) {
  if (!(reported_ms > 0) || !(search_w > 0) || !(search_h > 0)) {
    throw ConfigError("best-case time needs a positive time and search space");
  }
  const double t = reported_ms / (search_w * search_h);
  return paper_compat ? std::round(t * 100.0) / 100.0 : t;
}

Comparison normalize_comparison(double ours_ms, const HardwareProfile& ours, double theirs_ms,
                                const HardwareProfile& theirs, bool paper_compat) {
  if (!(ours_ms > 0) || !(theirs_ms > 0)) throw ConfigError("comparison needs positive times");
  ours.validate();
  theirs.validate();
  Comparison c;
  c.throughput_ratio = theirs.throughput / ours.throughput;
  if (paper_compat) c.throughput_ratio = std::round(c.throughput_ratio);
  c.total_ratio = c.throughput_ratio * (static_cast<double>(theirs.cores) / static_cast<double>(ours.cores));
  c.theirs_normalized_ms = theirs_ms * c.total_ratio;
  c.speedup = c.theirs_normalized_ms / ours_ms;
  return c;
}

double fps(double mean_latency_ms) {
  if (!(mean_latency_ms > 0)) throw ConfigError("fps needs a positive latency");
  return 1000.0 / mean_latency_ms;
}

std::string format_bench_report(const BenchReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "network=" << to_string(r.network) << '\n'
      << "n_warmup=" << r.n_warmup << '\n'
      << "n_runs=" << r.n_runs << '\n'
      << "mean_ms=" << r.mean_ms << '\n'
      << "std_ms=" << r.std_ms << '\n'
      << "fps=" << r.fps << '\n'
      << "flops_per_image=" << r.flops_per_image << '\n';
  return out.str();
}

std::string latencies_csv(const BenchReport& r) {
  std::string out = "run,latency_ms\n";
  char line[64];
  for (std::size_t i = 0; i < r.latencies_ms.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i, r.latencies_ms[i]);
    out += line;
  }
  return out;
}

std::string format_comparison(const Comparison& c, double ours_ms, const HardwareProfile& ours, double theirs_ms,
                              const HardwareProfile& theirs, bool paper_compat) {
  std::ostringstream out;
  out.precision(10);
  out << "mode=" << (paper_compat ? "paper-compat" : "exact") << '\n'
      << "ours=" << ours.name << " (" << ours.throughput / 1e9 << " GFlops, " << ours.cores << " cores)\n"
      << "theirs=" << theirs.name << " (" << theirs.throughput / 1e9 << " GFlops, " << theirs.cores << " cores)\n"
      << "ours_ms=" << ours_ms << '\n'
      << "theirs_ms=" << theirs_ms << '\n'
      << "throughput_ratio=" << c.throughput_ratio << '\n'
      << "total_ratio=" << c.total_ratio << '\n'
      << "theirs_normalized_ms=" << c.theirs_normalized_ms << '\n'
      << "speedup=" << c.speedup << '\n';
  return out.str();
}

}  // namespace handnet
