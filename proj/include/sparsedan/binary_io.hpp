// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary container helpers shared by the vocab and model
// file formats. Layout of every container:
//
//   magic[8] | u32 version | payload ... | u32 crc32(magic..payload)
//
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "sparsedan/errors.hpp"

namespace sparsedan::io {

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

using Magic = std::array<char, 8>;

/// Writes to `path`.tmp, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

class BinaryWriter {
 public:
  BinaryWriter(const Magic& magic, std::uint32_t version);

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void put(const T& value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    buffer_.insert(buffer_.end(), p, p + sizeof(T));
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void put_span(std::span<const T> values) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    buffer_.insert(buffer_.end(), p, p + values.size_bytes());
  }

  /// u32 length prefix followed by the raw bytes.
  void put_string(std::string_view s);

  /// Appends the checksum and writes atomically (temp file + rename).
  void commit(const std::filesystem::path& path);

  std::size_t size() const noexcept { return buffer_.size(); }

 private:
  std::vector<char> buffer_;
};

class BinaryReader {
 public:
  /// Loads the whole file, validates magic, version and checksum.
  BinaryReader(const std::filesystem::path& path, const Magic& magic,
               std::uint32_t version);

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    T value;
    require(sizeof(T), "truncated value");
    std::memcpy(&value, data_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void get_span(std::span<T> out) {
    require(out.size_bytes(), "truncated array");
    std::memcpy(out.data(), data_.data() + offset_, out.size_bytes());
    offset_ += out.size_bytes();
  }

  std::string get_string();

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return payload_end_ - offset_; }

  /// Throws IntegrityError unless the payload was consumed exactly.
  void expect_end() const;

  [[noreturn]] void fail(const std::string& what) const;

 private:
  void require(std::size_t bytes, const char* what) const;

  std::vector<char> data_;
  std::size_t offset_ = 0;
  std::size_t payload_end_ = 0;
  bool crc_mismatch_pending_ = false;
};

}  // namespace sparsedan::io
