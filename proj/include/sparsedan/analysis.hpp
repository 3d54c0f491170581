// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsedan/dataset.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/vocab.hpp"

namespace sparsedan {

// ---------------------------------------------------------------------------
// Coverage vs. loss

struct CoverageBucket {
  double lo = 0.0;  // inclusive
  double hi = 0.0;  // exclusive, except the last bucket which includes 1.0
  std::size_t count = 0;
  /// Loss quartiles (linear interpolation); NaN for empty buckets.
  double q1_loss = 0.0;
  double median_loss = 0.0;
  double q3_loss = 0.0;
};

struct CoverageReport {
  static constexpr std::size_t kBuckets = 10;
  std::vector<CoverageBucket> buckets;
  /// Examples without any extracted n-gram (coverage undefined).
  std::size_t undefined_count = 0;
  std::size_t total = 0;
};

/// Decile of matched/total computed exactly in integers; total > 0.
std::size_t coverage_bucket(std::size_t matched, std::size_t total) noexcept;

struct CoveragePoint {
  std::size_t matched = 0;
  std::size_t total = 0;
  double loss = 0.0;
};

/// Buckets precomputed (coverage, loss) points.
CoverageReport bucket_coverage(std::span<const CoveragePoint> points);

/// Per-example coverage and cross-entropy against the label, bucketed at
/// 10% granularity. Throws DataValidationError for unlabeled records.
CoverageReport coverage_vs_loss(const DanModel& model, std::span<const Record> dev,
                                std::optional<std::size_t> n_cutoff = std::nullopt);

void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Vocabulary-size vs. embedding-dimension sweep

struct BudgetConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;
};

/// How every student in a sweep is built and trained.
struct SweepRecipe {
  VocabConfig vocab;
  /// vocab_size and embed_dim are overridden per configuration.
  DanConfig model;
  std::optional<TrainConfig> kd;
  std::optional<TrainConfig> ft;
  std::uint64_t seed = 0;
};

struct SweepData {
  std::span<const std::string> vocab_documents;
  std::span<const Record> soft_labels;
  std::span<const Record> train;
  std::span<const Record> dev;
};

struct BudgetRow {
  std::size_t requested_vocab = 0;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;
  ParamCount params;
  double accuracy = 0.0;
  /// Non-empty when this configuration failed; the sweep continues.
  std::string error;
};

std::vector<BudgetRow> budget_sweep(std::span<const BudgetConfig> configs, const SweepData& data,
                                    const SweepRecipe& recipe);

void write_budget_csv(std::span<const BudgetRow> rows, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Inference throughput

enum class Precision : std::uint8_t { Fp32, Fp64 };

std::string_view to_string(Precision precision) noexcept;
Precision parse_precision(std::string_view text);

struct BenchOptions {
  std::size_t batch_size = 32;
  std::size_t warmup_batches = 5;
  std::size_t measured_batches = 50;
  /// Time featurization of raw text as part of every batch.
  bool include_featurize = false;
  Precision precision = Precision::Fp32;
  /// Independent single-threaded workers; throughput is aggregated.
  std::size_t workers = 1;
  std::optional<std::size_t> n_cutoff;
};

struct BenchReport {
  double samples_per_second = 0.0;
  std::size_t batch_size = 0;
  Precision precision = Precision::Fp32;
  std::string device_note;
  std::size_t warmup_batches = 0;
  std::size_t measured_batches = 0;
  std::size_t workers = 1;
  bool include_featurize = false;
  double latency_p50_ms = 0.0;
  double latency_p90_ms = 0.0;
  double latency_p99_ms = 0.0;
};

/// Steady-state samples/second after warmup. Model conversion and
/// pre-featurization (when excluded) happen outside the timed region.
/// Throws ConfigError when the dataset is smaller than one batch or fewer
/// than 10 batches are measured.
BenchReport bench_inference(const DanModel& model, std::span<const Record> dataset,
                            const BenchOptions& options);

/// Pretty-printed JSON object with every report field.
std::string to_json(const BenchReport& report);

/// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

}  // namespace sparsedan
