// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/tokenize.hpp"

#include <algorithm>
#include <limits>

#include "sparsedan/errors.hpp"

namespace sparsedan {
namespace {

// Length in bytes of the Unicode White_Space code point starting at s[i],
// or 0 if there is none.
std::size_t whitespace_length(std::string_view s, std::size_t i) {
  const auto c0 = static_cast<unsigned char>(s[i]);
  if (c0 == ' ' || (c0 >= 0x09 && c0 <= 0x0D)) return 1;
  if (c0 < 0x80) return 0;
  const std::size_t left = s.size() - i;
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
  if (c0 == 0xC2 && left >= 2) {
    // U+0085 NEL, U+00A0 NBSP
    return (byte(1) == 0x85 || byte(1) == 0xA0) ? 2 : 0;
  }
  if (left < 3) return 0;
  const unsigned char c1 = byte(1);
  const unsigned char c2 = byte(2);
  if (c0 == 0xE1 && c1 == 0x9A && c2 == 0x80) return 3;  // U+1680
  if (c0 == 0xE2 && c1 == 0x80) {
    // U+2000..U+200A, U+2028, U+2029, U+202F
    if ((c2 >= 0x80 && c2 <= 0x8A) || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF) return 3;
  }
  if (c0 == 0xE2 && c1 == 0x81 && c2 == 0x9F) return 3;  // U+205F
  if (c0 == 0xE3 && c1 == 0x80 && c2 == 0x80) return 3;  // U+3000
  return 0;
}

}  // namespace

TokenizedText tokenize(std::string_view text) {
  if (text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("document larger than 4 GiB");
  }
  TokenizedText out;
  out.normalized_.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t ws = whitespace_length(text, i); ws > 0) {
      i += ws;
      continue;
    }
    if (!out.begins_.empty()) out.normalized_.push_back(' ');
    out.begins_.push_back(static_cast<std::uint32_t>(out.normalized_.size()));
    while (i < text.size() && whitespace_length(text, i) == 0) {
      char c = text[i++];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      out.normalized_.push_back(c);
    }
    out.ends_.push_back(static_cast<std::uint32_t>(out.normalized_.size()));
  }
  return out;
}

std::size_t ngram_order(std::string_view key) noexcept {
  if (key.empty()) return 0;
  return static_cast<std::size_t>(std::count(key.begin(), key.end(), ' ')) + 1;
}

}  // namespace sparsedan
