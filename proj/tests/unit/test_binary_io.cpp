// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <zlib.h>

#include "fixtures.hpp"
#include "sparsedan/binary_io.hpp"
#include "sparsedan/errors.hpp"

using namespace sparsedan;
using sparsedan::testing::TempDir;

namespace {

constexpr io::Magic kMagic = {'T', 'E', 'S', 'T', 'F', 'M', 'T', '\0'};

void write_sample(const std::filesystem::path& path) {
  io::BinaryWriter w(kMagic, 3);
  w.put<std::uint64_t>(42);
  w.put_string("hello");
  const std::vector<double> xs{1.5, -2.25};
  w.put_span(std::span<const double>(xs));
  w.commit(path);
}

std::string slurp(const std::filesystem::path& path) { return sparsedan::testing::read_file(path); }

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

}  // namespace

TEST(BinaryIo, RoundTrip) {
  TempDir dir;
  write_sample(dir / "a.bin");
  io::BinaryReader r(dir / "a.bin", kMagic, 3);
  EXPECT_EQ(r.get<std::uint64_t>(), 42u);
  EXPECT_EQ(r.get_string(), "hello");
  std::vector<double> xs(2);
  r.get_span(std::span<double>(xs));
  EXPECT_EQ(xs, (std::vector<double>{1.5, -2.25}));
  EXPECT_NO_THROW(r.expect_end());
  EXPECT_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
}

TEST(BinaryIo, LayoutIsMagicVersionPayloadCrc) {
  TempDir dir;
  write_sample(dir / "a.bin");
  const std::string bytes = slurp(dir / "a.bin");
  ASSERT_EQ(bytes.size(), 8 + 4 + 8 + 4 + 5 + 16 + 4u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("TESTFMT\0", 8));
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 8, 4);
  EXPECT_EQ(version, 3u);
  // Trailing CRC32 covers everything before it.
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                         static_cast<uInt>(bytes.size() - 4));
  EXPECT_EQ(stored, static_cast<std::uint32_t>(crc));
}

TEST(BinaryIo, BadMagicIsIntegrityErrorAtZero) {
  TempDir dir;
  write_sample(dir / "a.bin");
  std::string bytes = slurp(dir / "a.bin");
  bytes[0] = 'X';
  dump(dir / "a.bin", bytes);
  try {
    io::BinaryReader r(dir / "a.bin", kMagic, 3);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(BinaryIo, VersionMismatchIsVersionError) {
  TempDir dir;
  write_sample(dir / "a.bin");
  EXPECT_THROW(io::BinaryReader(dir / "a.bin", kMagic, 4), VersionError);
}

TEST(BinaryIo, TruncationReportsOffset) {
  TempDir dir;
  write_sample(dir / "a.bin");
  const std::string bytes = slurp(dir / "a.bin");
  // Length prefix intact, two of five string bytes, then four stray bytes
  // that the reader takes for the checksum.
  dump(dir / "b.bin", bytes.substr(0, 8 + 4 + 8 + 4 + 2 + 4));
  io::BinaryReader r(dir / "b.bin", kMagic, 3);
  EXPECT_EQ(r.get<std::uint64_t>(), 42u);
  try {
    (void)r.get_string();
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_EQ(e.offset(), 24u);
  }
}

TEST(BinaryIo, FlippedPayloadByteFailsChecksum) {
  TempDir dir;
  write_sample(dir / "a.bin");
  std::string bytes = slurp(dir / "a.bin");
  bytes[30] ^= 0x01;  // inside the string payload
  dump(dir / "a.bin", bytes);
  io::BinaryReader r(dir / "a.bin", kMagic, 3);
  (void)r.get<std::uint64_t>();
  (void)r.get_string();
  std::vector<double> xs(2);
  r.get_span(std::span<double>(xs));
  EXPECT_THROW(r.expect_end(), IntegrityError);
}

TEST(BinaryIo, AtomicWriteReplacesFile) {
  TempDir dir;
  io::write_file_atomic(dir / "x.txt", "first");
  io::write_file_atomic(dir / "x.txt", "second");
  EXPECT_EQ(slurp(dir / "x.txt"), "second");
  EXPECT_FALSE(std::filesystem::exists(dir / "x.txt.tmp"));
}

TEST(BinaryIo, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(io::BinaryReader(dir / "nope.bin", kMagic, 1), IoError);
}
