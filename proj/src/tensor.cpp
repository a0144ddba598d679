#include "handnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "fileutil.hpp"

namespace handnet {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) {
    throw DimensionError("shape must have at least one dimension");
  }
  for (auto d : dims_) {
    if (d == 0) {
      throw DimensionError("shape " + str() + " has a zero dimension");
    }
  }
}

std::size_t Shape::numel() const noexcept {
  if (dims_.empty()) return 0;
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) ss << 'x';
    ss << dims_[i];
  }
  ss << ']';
  return ss.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("buffer of " + std::to_string(data_.size()) +
                         " elements does not fit shape " + shape_.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw DimensionError("cannot add " + other.shape_.str() + " to " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

// ---------------------------------------------------------------------------
// Finiteness validator

namespace {
std::atomic<bool> g_finite_checks{true};
}

bool finite_checks_enabled() noexcept { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool enabled) noexcept { g_finite_checks.store(enabled, std::memory_order_relaxed); }

FiniteChecksScope::FiniteChecksScope(bool enabled) : previous_(finite_checks_enabled()) {
  set_finite_checks(enabled);
}
FiniteChecksScope::~FiniteChecksScope() { set_finite_checks(previous_); }

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (!finite_checks_enabled()) return;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw DivergenceError(std::string("non-finite value at element ") + std::to_string(i) +
                            " of " + where + " output " + t.shape().str());
    }
  }
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul needs rank-2 operands, got " + a.shape().str() + " and " +
                         b.shape().str());
  }
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw DimensionError("matmul inner dimensions differ: " + a.shape().str() +
                         (transpose_a ? "^T" : "") + " x " + b.shape().str() +
                         (transpose_b ? "^T" : ""));
  }

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  ConstMap ma(a.raw(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  ConstMap mb(b.raw(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));

  Tensor<T> out(Shape{m, n});
  Eigen::Map<Mat> mo(out.raw(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!transpose_a && !transpose_b) {
    mo.noalias() = ma * mb;
  } else if (transpose_a && !transpose_b) {
    mo.noalias() = ma.transpose() * mb;
  } else if (!transpose_a && transpose_b) {
    mo.noalias() = ma * mb.transpose();
  } else {
    mo.noalias() = ma.transpose() * mb.transpose();
  }
  check_finite(out, "matmul");
  return out;
}

// ---------------------------------------------------------------------------
// im2col / col2im

std::size_t PatchGeometry::out_h() const {
  const std::size_t padded = height + 2 * pad;
  if (stride == 0 || kernel_h == 0 || padded < kernel_h) return 0;
  return (padded - kernel_h) / stride + 1;
}

std::size_t PatchGeometry::out_w() const {
  const std::size_t padded = width + 2 * pad;
  if (stride == 0 || kernel_w == 0 || padded < kernel_w) return 0;
  return (padded - kernel_w) / stride + 1;
}

void PatchGeometry::validate() const {
  if (stride == 0) throw DimensionError("stride must be >= 1");
  if (kernel_h == 0 || kernel_w == 0) throw DimensionError("kernel dims must be >= 1");
  if (out_h() == 0 || out_w() == 0) {
    throw DimensionError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                         " with pad " + std::to_string(pad) + " does not fit input " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
}

template <typename T>
void im2col_into(const T* image, const PatchGeometry& g, T* cols) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const std::size_t c = g.channels;
  T* row = cols;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* dst = row;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad);
        const bool row_in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (row_in && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
            const T* src = image + (static_cast<std::size_t>(iy) * g.width +
                                    static_cast<std::size_t>(ix)) * c;
            std::copy(src, src + c, dst);
          } else {
            std::fill(dst, dst + c, T(0));
          }
          dst += c;
        }
      }
      row += g.patch_size();
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const PatchGeometry& g, T* image) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const std::size_t c = g.channels;
  const T* row = cols;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* src = row;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad);
        const bool row_in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (row_in && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
            T* dst = image + (static_cast<std::size_t>(iy) * g.width +
                              static_cast<std::size_t>(ix)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
          src += c;
        }
      }
      row += g.patch_size();
    }
  }
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& image, std::size_t kernel_h, std::size_t kernel_w,
                 std::size_t stride, std::size_t pad) {
  if (image.rank() != 3) {
    throw DimensionError("im2col expects an HxWxC image, got " + image.shape().str());
  }
  PatchGeometry g{image.dim(0), image.dim(1), image.dim(2), kernel_h, kernel_w, stride, pad};
  g.validate();
  Tensor<T> cols(Shape{g.out_h() * g.out_w(), g.patch_size()});
  im2col_into(image.raw(), g, cols.raw());
  return cols;
}

// ---------------------------------------------------------------------------
// reduce / argmax

template <typename T>
Tensor<T> reduce(const Tensor<T>& t, ReduceKind kind, std::optional<std::size_t> axis) {
  auto combine = [kind](T acc, T v) { return kind == ReduceKind::kMax ? std::max(acc, v) : acc + v; };

  if (!axis) {
    T acc = kind == ReduceKind::kMax ? t[0] : T(0);
    for (std::size_t i = kind == ReduceKind::kMax ? 1 : 0; i < t.size(); ++i) acc = combine(acc, t[i]);
    if (kind == ReduceKind::kMean) acc /= static_cast<T>(t.size());
    return Tensor<T>(Shape{1}, std::vector<T>{acc});
  }

  const std::size_t ax = *axis;
  if (ax >= t.rank()) {
    throw DimensionError("reduce axis " + std::to_string(ax) + " out of range for " + t.shape().str());
  }
  const auto& dims = t.shape().dims();
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= dims[i];
  for (std::size_t i = ax + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t len = dims[ax];

  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i != ax) out_dims.push_back(dims[i]);
  }
  if (out_dims.empty()) out_dims.push_back(1);

  Tensor<T> out{Shape(out_dims)};
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      T acc = t[o * len * inner + in];
      for (std::size_t k = 1; k < len; ++k) acc = combine(acc, t[(o * len + k) * inner + in]);
      if (kind == ReduceKind::kMean) acc /= static_cast<T>(len);
      out[o * inner + in] = acc;
    }
  }
  return out;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw DimensionError("argmax of an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
std::size_t argmax(const Tensor<T>& t) {
  if (t.rank() != 1) throw DimensionError("argmax expects a rank-1 tensor, got " + t.shape().str());
  return argmax(t.data());
}

// ---------------------------------------------------------------------------
// HFTN dump

namespace {
constexpr std::string_view kTensorMagic = "HFTN";
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t, bool double_precision) {
  detail::ByteWriter w;
  w.raw(kTensorMagic);
  w.u8(kTensorFormatVersion);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (double_precision) {
      w.f64(static_cast<double>(t[i]));
    } else {
      w.f32(static_cast<float>(t[i]));
    }
  }
  detail::write_file(path, w.bytes());
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file<FormatError>(path);
  detail::ByteReader r(bytes, path.string());
  if (r.take(4) != kTensorMagic) r.fail("bad magic");
  if (const auto v = r.u8(); v != kTensorFormatVersion) r.fail("unsupported version " + std::to_string(v));
  const std::size_t rank = r.u8();
  if (rank == 0) r.fail("rank 0");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) {
    d = r.u32();
    if (d == 0) r.fail("zero dimension");
  }
  Shape shape(dims);
  const std::size_t n = shape.numel();
  std::size_t width = 0;
  if (r.remaining() == n * 4) {
    width = 4;
  } else if (r.remaining() == n * 8) {
    width = 8;
  } else {
    r.fail("payload of " + std::to_string(r.remaining()) + " bytes does not match " + shape.str());
  }
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(width == 4 ? r.f32() : r.f64());
  return Tensor<T>(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------

#define HANDNET_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                     \
  template void check_finite<T>(const Tensor<T>&, const char*);                                 \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                  \
  template void im2col_into<T>(const T*, const PatchGeometry&, T*);                             \
  template void col2im_add<T>(const T*, const PatchGeometry&, T*);                              \
  template Tensor<T> im2col<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t,         \
                               std::size_t);                                                    \
  template Tensor<T> reduce<T>(const Tensor<T>&, ReduceKind, std::optional<std::size_t>);        \
  template std::size_t argmax<T>(std::span<const T>);                                           \
  template std::size_t argmax<T>(const Tensor<T>&);                                             \
  template void write_tensor<T>(const std::filesystem::path&, const Tensor<T>&, bool);          \
  template Tensor<T> read_tensor<T>(const std::filesystem::path&);

HANDNET_INSTANTIATE(float)
HANDNET_INSTANTIATE(double)

#undef HANDNET_INSTANTIATE

}  // namespace handnet
