#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handnet/layers.hpp"
#include "handnet/tensor.hpp"

namespace handnet {

// Class index doubles as the one-hot position: no-hand = {1,0}, hand = {0,1}.
enum class Label : std::uint8_t { kNoHand = 0, kHand = 1 };

const char* to_string(Label label) noexcept;
// Accepts exactly "hand" or "nohand".
std::optional<Label> parse_label(std::string_view text) noexcept;

inline constexpr std::size_t kNumClasses = 2;
inline constexpr std::size_t kInputSize = 32;

TensorF onehot(Label label);
Label label_of(const TensorF& onehot_row);

struct ManifestEntry {
  std::string path;  // relative to the data root
  Label label = Label::kNoHand;
};

// CSV with a `path,label` header. Throws DataError naming the line for an
// unknown label, a missing column or a repeated path.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct Sample {
  TensorF pixels;  // size x size x 3, values in [0,1]
  TensorF label;   // one-hot, length 2
};

// Decodes PNG, JPEG or an HFTN H x W x 3 fixture (0..255 values), resizes
// bilinearly to size x size ignoring aspect ratio and scales to [0,1].
Sample decode_and_prepare(const ManifestEntry& entry, const std::filesystem::path& root,
                          std::size_t size = kInputSize);

std::vector<Sample> load_samples(std::span<const ManifestEntry> entries, const std::filesystem::path& root,
                                 std::size_t size = kInputSize);

std::vector<Label> labels_of(std::span<const Sample> samples);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::size_t k = 0;
  std::vector<Fold> folds;
};

// Stratified k-fold split: each class is shuffled with the seeded generator
// and dealt round-robin over the test folds, the second class continuing
// where the first stopped so fold sizes differ by at most one.
FoldPlan make_folds(std::span<const Label> labels, std::size_t k, std::uint64_t seed);

// Sample indices for one epoch. The order is a shuffle keyed by
// (seed, epoch); batches are drawn by count and wrap around the shuffled
// order when `iterations * batch_size` exceeds the sample count. Without
// `iterations` the epoch is ceil(n / batch_size) batches.
std::vector<std::vector<std::size_t>> batches(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch, std::optional<std::size_t> iterations = {});

struct Batch {
  TensorF images;  // N x H x W x 3
  TensorF labels;  // N x 2
};

Batch gather_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

// n/2 hand samples (uniform noise with a solid white 12x12 square at a random
// position) interleaved with n/2 no-hand samples (pure uniform noise).
std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t size = kInputSize);

}  // namespace handnet
