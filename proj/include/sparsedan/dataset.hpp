// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines datasets. One object per line:
//   {"text": str, "label": int?, "probs": [float, ...]?}
//   {"text1": str, "text2": str, "label": int?, "probs": [...]?}
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsedan/featurize.hpp"

namespace sparsedan {

struct Record {
  std::string text;
  /// Second sentence of a pair record.
  std::optional<std::string> text2;
  std::optional<int> label;
  /// Teacher distribution; empty when absent.
  std::vector<double> probs;
  /// 1-based line in the source file.
  std::size_t line = 0;

  bool is_pair() const noexcept { return text2.has_value(); }
};

/// Parses a JSONL file. Throws DataValidationError (with the line number) on
/// malformed JSON or records without text.
std::vector<Record> read_jsonl(const std::filesystem::path& path);
void write_jsonl(std::span<const Record> records, const std::filesystem::path& path);

/// Raw documents for vocabulary counting: "text" (and "text2") of JSONL
/// files, otherwise one document per line.
std::vector<std::string> read_documents(const std::filesystem::path& path);

/// Streams the same documents as read_documents across `files`, one line
/// in memory at a time.
DocumentSource stream_documents(std::vector<std::filesystem::path> files);

/// Both sides of pair records are returned as separate documents.
std::vector<std::string> texts_of(std::span<const Record> records);

Example to_example(const Record& record, const NgramVocab& vocab,
                   std::optional<std::size_t> n_cutoff = std::nullopt);
std::vector<Example> to_examples(std::span<const Record> records, const NgramVocab& vocab,
                                 std::optional<std::size_t> n_cutoff = std::nullopt);

enum class DataKind : std::uint8_t {
  Labeled,     // label required
  SoftLabels,  // probs required
  Unlabeled,   // text only
  Any,         // label/probs optional, checked when present
};

DataKind parse_data_kind(std::string_view text);

struct Violation {
  std::size_t line = 0;
  std::string message;
};

struct ValidationReport {
  std::size_t lines = 0;
  std::size_t total_violations = 0;
  /// First kMaxReported violations in file order.
  std::vector<Violation> violations;
  bool ok() const noexcept { return total_violations == 0; }

  static constexpr std::size_t kMaxReported = 10;
};

/// Schema check of a JSONL file: field types, label range, probability
/// vectors (non-negative, sum 1 within 1e-6, constant length).
/// Throws IoError if the file cannot be read.
ValidationReport validate_data(const std::filesystem::path& path, DataKind kind,
                               std::optional<std::size_t> n_classes = std::nullopt);

}  // namespace sparsedan
