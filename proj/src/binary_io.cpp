// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/binary_io.hpp"

#include <zlib.h>

#include <fstream>
#include <limits>

namespace sparsedan::io {
namespace {

std::uint32_t checksum(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  while (size > 0) {
    const std::size_t n = std::min(size, kChunk);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
    data += n;
    size -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

BinaryWriter::BinaryWriter(const Magic& magic, std::uint32_t version) {
  buffer_.insert(buffer_.end(), magic.begin(), magic.end());
  put(version);
}

void BinaryWriter::put_string(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("string too long for container");
  }
  put(static_cast<std::uint32_t>(s.size()));
  buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void BinaryWriter::commit(const std::filesystem::path& path) {
  const std::uint32_t crc = checksum(buffer_.data(), buffer_.size());
  put(crc);
  try {
    write_file_atomic(path, std::string_view(buffer_.data(), buffer_.size()));
  } catch (...) {
    buffer_.resize(buffer_.size() - sizeof(crc));
    throw;
  }
  buffer_.resize(buffer_.size() - sizeof(crc));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

BinaryReader::BinaryReader(const std::filesystem::path& path, const Magic& magic,
                           std::uint32_t version) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  data_.resize(size);
  in.read(data_.data(), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path.string());

  payload_end_ = data_.size();
  if (data_.size() < magic.size() ||
      std::memcmp(data_.data(), magic.data(), magic.size()) != 0) {
    throw IntegrityError("bad magic bytes in " + path.string(), 0);
  }
  offset_ = magic.size();
  const auto found = get<std::uint32_t>();
  if (found != version) throw VersionError(found, version);

  if (data_.size() < offset_ + sizeof(std::uint32_t)) {
    throw IntegrityError("truncated container (missing checksum)", data_.size());
  }
  payload_end_ = data_.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, data_.data() + payload_end_, sizeof(stored));
  // A truncated file usually fails the checksum too; report truncation
  // precisely while decoding instead, and only check the CRC afterwards.
  if (checksum(data_.data(), payload_end_) != stored) {
    crc_mismatch_pending_ = true;
  }
}

std::string BinaryReader::get_string() {
  const auto n = get<std::uint32_t>();
  require(n, "truncated string");
  std::string s(data_.data() + offset_, n);
  offset_ += n;
  return s;
}

void BinaryReader::expect_end() const {
  if (offset_ != payload_end_) fail("trailing bytes after payload");
  if (crc_mismatch_pending_) {
    throw IntegrityError("checksum mismatch", payload_end_);
  }
}

void BinaryReader::fail(const std::string& what) const {
  throw IntegrityError(what, offset_);
}

void BinaryReader::require(std::size_t bytes, const char* what) const {
  if (bytes > payload_end_ - offset_) fail(what);
}

}  // namespace sparsedan::io
