#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handnet/errors.hpp"

namespace handnet {

// Dimension list of a tensor. Always non-empty, every dim >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept;
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

// Storage is 64-byte aligned so vectorized kernels take the same code path
// (and summation order) regardless of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

// Dense row-major array, last axis fastest. Images are H x W x C and batches
// N x H x W x C (channels last).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, const std::vector<T>& data);
  Tensor(Shape shape, Storage data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor from(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Same buffer, new dims. Element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  template <typename U>
  Tensor<U> cast() const {
    typename Tensor<U>::Storage out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(T scale);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Global switch for the finiteness validator. On by default; latency
// measurement turns it off.
bool finite_checks_enabled() noexcept;
void set_finite_checks(bool enabled) noexcept;

class FiniteChecksScope {
 public:
  explicit FiniteChecksScope(bool enabled);
  ~FiniteChecksScope();
  FiniteChecksScope(const FiniteChecksScope&) = delete;
  FiniteChecksScope& operator=(const FiniteChecksScope&) = delete;

 private:
  bool previous_;
};

// Throws DivergenceError naming `where` if any element is NaN or infinite.
// No-op while the validator is disabled.
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

// out = op(a) * op(b) where op transposes a rank-2 operand on request.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

struct PatchGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t patch_size() const noexcept { return kernel_h * kernel_w * channels; }
  // Throws DimensionError when the output would be empty.
  void validate() const;
};

// (Hout*Wout) x (kh*kw*C) patch matrix of one H x W x C image; each row is
// flattened in (kh, kw, c) order with zeros for padded positions.
template <typename T>
Tensor<T> im2col(const Tensor<T>& image, std::size_t kernel_h, std::size_t kernel_w,
                 std::size_t stride, std::size_t pad);

// Raw-buffer variants used by the batched convolution.
template <typename T>
void im2col_into(const T* image, const PatchGeometry& g, T* cols);
template <typename T>
void col2im_add(const T* cols, const PatchGeometry& g, T* image);

enum class ReduceKind { kSum, kMean, kMax };

// Full reduction yields a one-element tensor; axis reduction drops that axis
// (a rank-1 input reduces to shape {1}).
template <typename T>
Tensor<T> reduce(const Tensor<T>& t, ReduceKind kind, std::optional<std::size_t> axis = {});

// Index of the largest element; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values);
template <typename T>
std::size_t argmax(const Tensor<T>& t);

// "HFTN" raw dump: magic, version byte, rank byte, u32 LE dims, LE IEEE-754
// data. Element width is 4 or 8 bytes and is recovered from the payload size.
template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t,
                  bool double_precision = sizeof(T) == 8);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

inline constexpr std::uint8_t kTensorFormatVersion = 1;

}  // namespace handnet
