// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sparsedan/dataset.hpp"
#include "sparsedan/model.hpp"

namespace sparsedan {

/// Which n-grams survive a post-hoc prune. Exactly one of keep_fraction
/// and keep_count is set; `frequencies` is indexed by the model's vocab ids.
struct PruneSpec {
  std::optional<double> keep_fraction;
  std::optional<std::size_t> keep_count;
  VocabSource frequency_source = VocabSource::TrainOnly;
  std::vector<std::uint64_t> frequencies;

  /// Number of entries kept from a vocabulary of `vocab_size`:
  /// keep_count, or ceil(keep_fraction * vocab_size).
  std::size_t resolve_keep(std::size_t vocab_size) const;
  void validate(std::size_t vocab_size) const;
};

/// Ids of the `keep` best-ranked entries (frequency descending, ties by
/// `tie`), in rank order.
std::vector<std::uint32_t> select_kept(const NgramVocab& vocab,
                                       std::span<const std::uint64_t> frequencies,
                                       std::size_t keep, TieBreak tie);

/// Self-contained smaller model: kept entries re-densified in rank order,
/// their embedding rows copied bit-for-bit, dense head unchanged.
DanModel prune_model(const DanModel& model, const PruneSpec& spec);

struct PruneSweepRow {
  double fraction = 0.0;
  std::size_t keep_count = 0;
  ParamCount params;
  double accuracy = 0.0;
};

/// Accuracy-vs-size curve over `fractions`, evaluated on raw dev records.
std::vector<PruneSweepRow> prune_sweep(const DanModel& model,
                                       std::span<const std::uint64_t> frequencies,
                                       VocabSource source, std::span<const double> fractions,
                                       std::span<const Record> dev);

struct CutoffRow {
  std::size_t cutoff = 0;
  std::size_t effective_vocab = 0;
  double accuracy = 0.0;
};

/// Dev accuracy when n-grams longer than each cutoff are ignored.
std::vector<CutoffRow> cutoff_eval(const DanModel& model, std::span<const Record> dev,
                                   std::span<const std::size_t> cutoffs);

void write_prune_sweep_csv(std::span<const PruneSweepRow> rows, const std::filesystem::path& path);
void write_cutoff_csv(std::span<const CutoffRow> rows, const std::filesystem::path& path);

}  // namespace sparsedan
