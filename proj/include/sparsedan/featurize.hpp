// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sparsedan/vocab.hpp"

namespace sparsedan {

/// In-vocabulary n-gram ids of one text plus coverage counters.
struct FeaturizedExample {
  /// Multiset of ids in extraction order (all unigrams, then bigrams, ...).
  std::vector<std::uint32_t> ids;
  /// All n-grams extracted from the text, in vocabulary or not.
  std::size_t total_ngrams = 0;
  /// Extracted n-grams found in the vocabulary; equals ids.size().
  std::size_t matched_ngrams = 0;
  std::optional<int> label;
  /// Teacher distribution; empty when absent.
  std::vector<double> teacher_probs;
  /// 1-based line of the source record, 0 if not from a file.
  std::size_t source_line = 0;
};

/// Sentence pair; label and teacher distribution live at the pair level.
struct PairExample {
  FeaturizedExample left;
  FeaturizedExample right;
  std::optional<int> label;
  std::vector<double> teacher_probs;
  std::size_t source_line = 0;
};

using Example = std::variant<FeaturizedExample, PairExample>;

const std::optional<int>& label_of(const Example& ex) noexcept;
const std::vector<double>& teacher_probs_of(const Example& ex) noexcept;
std::size_t source_line_of(const Example& ex) noexcept;

/// Extracts every n-gram of order in the vocabulary range (capped at
/// `n_cutoff` when given) and keeps the ids of those in the vocabulary.
/// Throws ConfigError when `n_cutoff` lies outside the vocabulary range.
FeaturizedExample featurize(std::string_view text, const NgramVocab& vocab,
                            std::optional<std::size_t> n_cutoff = std::nullopt);

PairExample featurize_pair(std::string_view left, std::string_view right,
                           const NgramVocab& vocab,
                           std::optional<std::size_t> n_cutoff = std::nullopt);

/// matched_ngrams / total_ngrams; throws UndefinedCoverageError if total is 0.
double coverage_ratio(const FeaturizedExample& ex);
/// Coverage pooled over both sides of a pair.
double coverage_ratio(const PairExample& ex);

/// Order-preserving featurization of many texts; identical to mapping
/// featurize() over the input regardless of `workers`.
std::vector<FeaturizedExample> featurize_stream(std::span<const std::string> texts,
                                                const NgramVocab& vocab,
                                                std::size_t workers = 1,
                                                std::optional<std::size_t> n_cutoff = std::nullopt);

}  // namespace sparsedan
