#include "handnet/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "handnet/image_io.hpp"

namespace handnet {

const char* to_string(Label label) noexcept { return label == Label::kHand ? "hand" : "nohand"; }

std::optional<Label> parse_label(std::string_view text) noexcept {
  if (text == "hand") return Label::kHand;
  if (text == "nohand") return Label::kNoHand;
  return std::nullopt;
}

TensorF onehot(Label label) {
  TensorF t(Shape{kNumClasses});
  t[static_cast<std::size_t>(label)] = 1.0f;
  return t;
}

Label label_of(const TensorF& onehot_row) {
  return argmax(onehot_row.data()) == 1 ? Label::kHand : Label::kNoHand;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());

  const std::string where = path.string() + " line ";
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(where + "1: empty manifest, expected header path,label");
  ++line_no;
  const auto header = split_csv(trim(line));
  if (header.size() != 2 || header[0] != "path" || header[1] != "label") {
    throw DataError(where + "1: header must be 'path,label'");
  }

  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    const std::string at = where + std::to_string(line_no) + ": ";
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw DataError(at + "expected two columns path,label");
    }
    const auto label = parse_label(fields[1]);
    if (!label) throw DataError(at + "unknown label '" + fields[1] + "' (expected hand or nohand)");
    if (!seen.insert(fields[0]).second) throw DataError(at + "duplicate path '" + fields[0] + "'");
    entries.push_back({fields[0], *label});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << "path,label\n";
  for (const auto& e : entries) out << e.path << ',' << to_string(e.label) << '\n';
}

// ---------------------------------------------------------------------------
// Decoding

Sample decode_and_prepare(const ManifestEntry& entry, const std::filesystem::path& root, std::size_t size) {
  const RgbImage raw = read_image(root / entry.path);
  const RgbImage small = resize_bilinear(raw, size, size);
  TensorF pixels(Shape{size, size, 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<float>(std::clamp(static_cast<double>(small.rgb[i]) / 255.0, 0.0, 1.0));
  }
  return Sample{std::move(pixels), onehot(entry.label)};
}

std::vector<Sample> load_samples(std::span<const ManifestEntry> entries, const std::filesystem::path& root,
                                 std::size_t size) {
  std::vector<Sample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) samples.push_back(decode_and_prepare(e, root, size));
  return samples;
}

std::vector<Label> labels_of(std::span<const Sample> samples) {
  std::vector<Label> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(label_of(s.label));
  return labels;
}

// ---------------------------------------------------------------------------
// Folds

FoldPlan make_folds(std::span<const Label> labels, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw ConfigError("k-fold needs k >= 2, got " + std::to_string(k));
  if (k > n) throw ConfigError("k = " + std::to_string(k) + " exceeds sample count " + std::to_string(n));

  std::vector<std::size_t> by_class[kNumClasses];
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (by_class[c].size() < k) {
      throw ConfigError("class " + std::string(to_string(static_cast<Label>(c))) + " has " +
                        std::to_string(by_class[c].size()) + " samples, fewer than k = " + std::to_string(k));
    }
  }

  Rng rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.folds.resize(k);
  std::size_t next = 0;
  // Hand first, then no-hand, so the deal order does not depend on enum values.
  for (Label cls : {Label::kHand, Label::kNoHand}) {
    auto& idx = by_class[static_cast<std::size_t>(cls)];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) {
      plan.folds[next].test.push_back(i);
      next = (next + 1) % k;
    }
  }

  std::vector<char> in_test(n);
  for (auto& fold : plan.folds) {
    std::sort(fold.test.begin(), fold.test.end());
    std::fill(in_test.begin(), in_test.end(), 0);
    for (std::size_t i : fold.test) in_test[i] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_test[i]) fold.train.push_back(i);
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> batches(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch, std::optional<std::size_t> iterations) {
  if (n_samples == 0) throw DataError("cannot batch an empty sample list");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");

  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t count = iterations.value_or((n_samples + batch_size - 1) / batch_size);
  std::vector<std::vector<std::size_t>> out(count);
  std::size_t cursor = 0;
  for (auto& b : out) {
    b.reserve(batch_size);
    for (std::size_t j = 0; j < batch_size; ++j) {
      b.push_back(order[cursor]);
      cursor = (cursor + 1) % n_samples;
    }
  }
  return out;
}

Batch gather_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("empty batch");
  const Shape& px = samples[indices[0]].pixels.shape();
  const std::size_t image_size = px.numel();
  Batch b{TensorF(Shape{indices.size(), px[0], px[1], px[2]}), TensorF(Shape{indices.size(), kNumClasses})};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Sample& s = samples[indices[r]];
    if (s.pixels.shape() != px) throw DimensionError("batch mixes image shapes " + px.str() + " and " + s.pixels.shape().str());
    std::copy(s.pixels.data().begin(), s.pixels.data().end(), b.images.raw() + r * image_size);
    std::copy(s.label.data().begin(), s.label.data().end(), b.labels.raw() + r * kNumClasses);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (n == 0 || n % 2 != 0) throw ConfigError("synthetic dataset size must be a positive even number");
  constexpr std::size_t kSquare = 12;
  if (size < kSquare) throw ConfigError("synthetic images must be at least 12 pixels wide");

  Rng rng(seed);
  std::uniform_real_distribution<float> noise(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> corner(0, size - kSquare);

  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Label label = i % 2 == 0 ? Label::kHand : Label::kNoHand;
    TensorF pixels(Shape{size, size, 3});
    for (auto& v : pixels.data()) v = noise(rng);
    if (label == Label::kHand) {
      const std::size_t y0 = corner(rng), x0 = corner(rng);
      for (std::size_t y = y0; y < y0 + kSquare; ++y) {
        for (std::size_t x = x0; x < x0 + kSquare; ++x) {
          for (std::size_t c = 0; c < 3; ++c) pixels[(y * size + x) * 3 + c] = 1.0f;
        }
      }
    }
    out.push_back({std::move(pixels), onehot(label)});
  }
  return out;
}

}  // namespace handnet
