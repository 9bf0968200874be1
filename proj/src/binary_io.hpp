#pragma once

// Little-endian byte encoding shared by the activation, probe and store
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s3m/error.hpp"

namespace s3m::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s.data(), s.size()); }

  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }

  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      buf_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    } else {
      for (float f : values) uint(std::bit_cast<std::uint32_t>(f));
    }
  }

  /// u16 length prefix followed by the raw bytes.
  void short_string(std::string_view s);

  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n);

  template <typename T>
  T uint() {
    auto raw = bytes(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return static_cast<T>(v);
  }

  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  void floats(std::span<float> out);

  std::string short_string() {
    auto n = uint<std::uint16_t>();
    return std::string(bytes(n));
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file_bytes(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace s3m::detail
