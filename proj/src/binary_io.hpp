#pragma once

// Little-endian encode/decode helpers shared by the tensor dump and the
// checkpoint format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "handnet/errors.hpp"

namespace handnet::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(&v, sizeof v); }
  void u32(std::uint32_t v) { put(&v, sizeof v); }
  void f32(float v) { put(&v, sizeof v); }
  void f64(double v) { put(&v, sizeof v); }
  void raw(std::string_view s) { bytes_.append(s.data(), s.size()); }

  const std::string& bytes() const noexcept { return bytes_; }

 private:
  void put(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  float f32() { return get<float>(); }
  double f64() { return get<double>(); }

  std::string_view take(std::size_t n) {
    require(n);
    auto s = bytes_.substr(offset_, n);
    offset_ += n;
    return s;
  }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at offset " + std::to_string(offset_));
  }

 private:
  template <typename V>
  V get() {
    require(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + offset_, sizeof(V));
    offset_ += sizeof(V);
    return v;
  }

  void require(std::size_t n) const {
    if (bytes_.size() - offset_ < n) {
      fail("truncated (need " + std::to_string(n) + " more bytes)");
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

}  // namespace handnet::detail
