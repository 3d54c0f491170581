// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sparsedan {

/// A document after lowercasing and whitespace splitting.
///
/// Tokens are stored back to back in `normalized`, separated by exactly one
/// ASCII space, so the n-gram starting at token i with order n is the
/// contiguous substring from the start of token i to the end of token
/// i+n-1. N-gram keys everywhere in the library use this form.
class TokenizedText {
 public:
  std::size_t size() const noexcept { return begins_.size(); }
  bool empty() const noexcept { return begins_.empty(); }

  std::string_view token(std::size_t i) const { return ngram(i, 1); }

  /// Key of the n-gram of order `n` starting at token `i`; i + n <= size().
  std::string_view ngram(std::size_t i, std::size_t n) const {
    const std::uint32_t b = begins_[i];
    const std::uint32_t e = ends_[i + n - 1];
    return std::string_view(normalized_).substr(b, e - b);
  }

  const std::string& normalized() const noexcept { return normalized_; }

 private:
  friend TokenizedText tokenize(std::string_view text);
  std::string normalized_;
  std::vector<std::uint32_t> begins_;
  std::vector<std::uint32_t> ends_;
};

/// ASCII-lowercases `text` and splits it on runs of Unicode whitespace.
TokenizedText tokenize(std::string_view text);

/// Number of tokens in an n-gram key.
std::size_t ngram_order(std::string_view key) noexcept;

}  // namespace sparsedan
