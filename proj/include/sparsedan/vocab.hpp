// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sparsedan/binary_io.hpp"

namespace sparsedan {

/// Which documents the vocabulary frequencies were estimated on.
enum class VocabSource : std::uint8_t { TrainOnly = 0, CorpusAndTrain = 1 };

/// Ordering among n-grams of equal frequency at the top-k boundary.
enum class TieBreak : std::uint8_t { LexicographicAscending = 0, LexicographicDescending = 1 };

struct NgramRange {
  std::uint32_t min = 1;
  std::uint32_t max = 4;

  /// Throws ConfigError unless 1 <= min <= max.
  void validate() const;
  bool contains(std::size_t order) const noexcept { return order >= min && order <= max; }
  bool operator==(const NgramRange&) const = default;
};

struct VocabEntry {
  std::string ngram;
  std::uint64_t frequency = 0;
  bool operator==(const VocabEntry&) const = default;
};

/// True if (freq_a, a) ranks strictly before (freq_b, b): higher frequency
/// first, ties resolved by `tie`.
bool ranks_before(std::uint64_t freq_a, std::string_view a, std::uint64_t freq_b,
                  std::string_view b, TieBreak tie) noexcept;

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

/// Immutable n-gram vocabulary. The id of an entry is its position.
class NgramVocab {
 public:
  NgramVocab() = default;
  /// Validates orders against `range` and uniqueness of the n-grams.
  NgramVocab(std::vector<VocabEntry> entries, NgramRange range,
             VocabSource source = VocabSource::TrainOnly,
             TieBreak tie = TieBreak::LexicographicAscending);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<VocabEntry>& entries() const noexcept { return entries_; }
  const VocabEntry& entry(std::uint32_t id) const { return entries_.at(id); }
  NgramRange range() const noexcept { return range_; }
  VocabSource source() const noexcept { return source_; }
  TieBreak tie_break() const noexcept { return tie_; }

  std::optional<std::uint32_t> find(std::string_view ngram) const {
    auto it = index_.find(ngram);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Order (token count) of entry `id`.
  std::size_t order(std::uint32_t id) const { return orders_.at(id); }

  /// Number of entries whose order is <= n.
  std::size_t count_up_to_order(std::size_t n) const noexcept;

  bool operator==(const NgramVocab& other) const;

 private:
  std::vector<VocabEntry> entries_;
  std::vector<std::uint8_t> orders_;
  std::unordered_map<std::string, std::uint32_t, StringHash, std::equal_to<>> index_;
  NgramRange range_;
  VocabSource source_ = VocabSource::TrainOnly;
  TieBreak tie_ = TieBreak::LexicographicAscending;
};

struct CorpusStats {
  std::uint64_t document_count = 0;
  std::uint64_t token_count = 0;
  std::map<std::uint32_t, std::uint64_t> distinct_ngrams_per_order;
};

struct VocabConfig {
  NgramRange range{1, 4};
  std::size_t top_k = 1'000'000;
  TieBreak tie_break = TieBreak::LexicographicAscending;
  VocabSource source = VocabSource::CorpusAndTrain;
  /// Counting threads for in-memory document collections.
  std::size_t workers = 1;
  /// Spill sorted partial counts to disk once this many distinct n-grams
  /// are held in memory; 0 disables spilling.
  std::size_t max_in_memory = 0;
  std::filesystem::path spill_dir = std::filesystem::temp_directory_path();

  void validate() const;
};

/// Pulls the next document into `doc`; returns false when exhausted.
using DocumentSource = std::function<bool(std::string& doc)>;

/// Streaming n-gram counter with optional external merge of spilled runs.
class NgramCounter {
 public:
  explicit NgramCounter(const VocabConfig& config);
  ~NgramCounter();
  NgramCounter(NgramCounter&&) noexcept;
  NgramCounter& operator=(NgramCounter&&) noexcept;
  NgramCounter(const NgramCounter&) = delete;
  NgramCounter& operator=(const NgramCounter&) = delete;

  void add(std::string_view document);
  /// Folds another counter's counts (and spilled runs) into this one.
  void merge(NgramCounter&& other);

  std::uint64_t document_count() const noexcept { return documents_; }

  struct Result {
    NgramVocab vocab;
    CorpusStats stats;
  };
  /// Selects the top-k n-grams; the counter is left empty.
  Result finish();

 private:
  void spill();

  VocabConfig config_;
  std::unordered_map<std::string, std::uint64_t, StringHash, std::equal_to<>> counts_;
  std::vector<std::filesystem::path> runs_;
  std::uint64_t documents_ = 0;
  std::uint64_t tokens_ = 0;
};

/// Top-k most frequent n-grams of the documents. Throws EmptyCorpusError
/// when there are no documents and ConfigError on an invalid config.
NgramVocab build_vocab(std::span<const std::string> documents, const VocabConfig& config);
NgramVocab build_vocab(const DocumentSource& documents, const VocabConfig& config);

/// Frequency of every vocab entry over exactly `documents`, indexed by id.
std::vector<std::uint64_t> ngram_frequencies(std::span<const std::string> documents,
                                             const NgramVocab& vocab);
std::vector<std::uint64_t> ngram_frequencies(const DocumentSource& documents,
                                             const NgramVocab& vocab);

void save_vocab(const NgramVocab& vocab, const std::filesystem::path& path);
NgramVocab load_vocab(const std::filesystem::path& path);

// Body encoding shared with the model container.
void write_vocab_body(io::BinaryWriter& out, const NgramVocab& vocab);
NgramVocab read_vocab_body(io::BinaryReader& in);

std::string_view to_string(VocabSource source) noexcept;
std::string_view to_string(TieBreak tie) noexcept;
VocabSource parse_vocab_source(std::string_view text);
TieBreak parse_tie_break(std::string_view text);

}  // namespace sparsedan
