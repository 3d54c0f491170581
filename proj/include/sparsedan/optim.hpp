// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparsedan/featurize.hpp"
#include "sparsedan/model.hpp"

namespace sparsedan {

/// KD matches teacher distributions; FT fits hard labels.
enum class LossMode : std::uint8_t { KD = 0, FT = 1 };

std::string_view to_string(LossMode mode) noexcept;

/// KL(teacher || student) = sum_j t_j log(t_j / s_j); terms with t_j = 0
/// contribute nothing. Throws StructuralError on a length mismatch.
double kd_loss(std::span<const double> teacher, std::span<const double> student);

/// -log student[label]. Throws ConfigError for an out-of-range label.
double ft_loss(int label, std::span<const double> student);

/// Embedding-table gradient restricted to the rows a batch touched.
class SparseRowGradient {
 public:
  explicit SparseRowGradient(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  /// Touched rows in first-touch order.
  const std::vector<std::uint32_t>& rows() const noexcept { return rows_; }
  std::span<const double> values(std::size_t slot) const {
    return std::span<const double>(values_).subspan(slot * dim_, dim_);
  }
  /// Gradient of `row`, or nullptr if the row was not touched.
  const double* find(std::uint32_t row) const;

  /// Registers `row` (zero gradient if new) and returns its slot. Slot
  /// storage may move when new rows are added.
  std::size_t touch(std::uint32_t row);
  std::span<double> slot_values(std::size_t slot) {
    return std::span<double>(values_).subspan(slot * dim_, dim_);
  }

  void add(const SparseRowGradient& other);
  void scale(double factor);

 private:
  std::size_t dim_;
  std::vector<std::uint32_t> rows_;
  std::vector<double> values_;
  std::unordered_map<std::uint32_t, std::size_t> slots_;
};

struct Gradients {
  SparseRowGradient embedding;
  /// Mirrors DanWeights::dense_tensors().
  std::vector<std::vector<double>> dense;
  /// Mean loss over the batch.
  double loss = 0.0;
  std::size_t examples = 0;
  /// Examples whose argmax matched the label (FT) or the teacher argmax (KD).
  std::size_t correct = 0;

  static Gradients zeros_like(const DanModel& model);
};

/// Mean-over-batch gradient of the loss. Throws DataValidationError when a
/// KD example has no teacher distribution or an FT example has no label.
Gradients backward(std::span<const Example* const> batch, const DanModel& model, LossMode mode,
                   double temperature = 1.0, std::size_t workers = 1);
Gradients backward(std::span<const Example> batch, const DanModel& model, LossMode mode,
                   double temperature = 1.0, std::size_t workers = 1);

/// Mean loss only (forward pass), matching backward()'s objective.
double batch_loss(std::span<const Example> batch, const DanModel& model, LossMode mode,
                  double temperature = 1.0);

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Optimizer state: dense Adam moments for every head tensor plus lazily
/// created per-row moments and step counters for the embedding table.
class TrainState {
 public:
  TrainState(const DanModel& model, AdamHyper hyper);

  const AdamHyper& hyper() const noexcept { return hyper_; }
  std::uint64_t global_step() const noexcept { return global_step_; }

  std::size_t touched_rows() const noexcept { return row_of_slot_.size(); }
  bool has_row(std::uint32_t row) const { return slots_.contains(row); }
  std::uint64_t row_steps(std::uint32_t row) const;
  std::span<const double> row_first_moment(std::uint32_t row) const;
  std::span<const double> row_second_moment(std::uint32_t row) const;

  const std::vector<std::vector<double>>& dense_first_moment() const noexcept { return dense_m_; }
  const std::vector<std::vector<double>>& dense_second_moment() const noexcept { return dense_v_; }

 private:
  friend void hybrid_adam_step(TrainState&, DanModel&, const Gradients&);
  std::size_t slot_for(std::uint32_t row);

  AdamHyper hyper_;
  std::size_t dim_;
  std::uint64_t global_step_ = 0;
  std::vector<std::vector<double>> dense_m_;
  std::vector<std::vector<double>> dense_v_;
  std::unordered_map<std::uint32_t, std::size_t> slots_;
  std::vector<std::uint32_t> row_of_slot_;
  std::vector<std::uint64_t> row_steps_;
  std::vector<double> sparse_m_;
  std::vector<double> sparse_v_;
};

/// Dense tensors: Adam with bias correction on the global step. Embedding
/// rows present in the gradient: Adam with bias correction on the row's own
/// update count. Untouched rows and their moments are left as they are.
void hybrid_adam_step(TrainState& state, DanModel& model, const Gradients& gradients);

struct TrainConfig {
  LossMode mode = LossMode::KD;
  AdamHyper adam{};
  std::size_t batch_size = 2048;
  /// Total updates; 0 means run `epochs` passes over the data.
  std::size_t steps = 0;
  std::size_t epochs = 1;
  /// Updates between dev evaluations; 0 means once per epoch.
  std::size_t eval_interval = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Threads for gradient computation (reduction order is fixed).
  std::size_t workers = 1;

  /// Stage defaults: KD lr 5e-4, batch 2048, eval every 1000 updates;
  /// FT lr 1e-4, batch 32, eval every epoch.
  static TrainConfig defaults(LossMode mode);
  void validate() const;
};

struct MetricRow {
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  std::size_t steps_run = 0;
  std::optional<double> best_dev_accuracy;
  std::size_t best_step = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  /// Mean cross-entropy against the label (KL to the teacher when unlabeled).
  double loss = 0.0;
  std::size_t count = 0;
};

EvalResult evaluate(const DanModel& model, std::span<const Example> examples);

/// Runs one stage. With a dev set, evaluates every eval_interval updates and
/// leaves `model` at the best-dev-accuracy checkpoint.
TrainResult train(DanModel& model, std::span<const Example> train_set,
                  std::span<const Example> dev_set, const TrainConfig& config);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

}  // namespace sparsedan
