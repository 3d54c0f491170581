// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sparsedan/analysis.hpp"
#include "sparsedan/config.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/vocab.hpp"

namespace sparsedan {

/// End-to-end student run: vocab, then distillation (stage 2), then
/// fine-tuning (stage 3), then optional prune and benchmark.
///
/// Leaving `train` unset gives the privacy mode: the task training set is
/// never opened and the vocabulary comes from the unlabeled corpus alone.
struct PipelineConfig {
  std::vector<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> train;
  std::optional<std::filesystem::path> dev;
  std::optional<std::filesystem::path> soft_labels;
  std::filesystem::path out_dir = "run";

  VocabConfig vocab;
  DanConfig model;
  TrainConfig kd = TrainConfig::defaults(LossMode::KD);
  TrainConfig ft = TrainConfig::defaults(LossMode::FT);
  bool run_kd = true;
  bool run_ft = true;

  /// Keep this fraction of the final model's vocab, ranked by training-set
  /// frequency (corpus frequency in privacy mode).
  std::optional<double> prune_keep_fraction;
  bool run_bench = false;
  BenchOptions bench;

  /// Model init uses seed+1, KD seed+2, FT seed+3.
  std::uint64_t seed = 0;
  bool overwrite = false;

  /// Throws ConfigError naming the offending key when inputs are missing
  /// or inconsistent with the enabled stages.
  void validate() const;
};

/// Reads [data], [vocab], [model], [kd], [ft], [prune], [bench] and the
/// top-level seed/out_dir/stage toggles. Relative paths resolve against the
/// config file's directory.
PipelineConfig pipeline_config_from(const KeyValueConfig& cfg,
                                    const std::filesystem::path& base_dir = {});

struct StageInputs {
  std::string stage;
  std::vector<std::filesystem::path> files;
};

struct PipelineResult {
  std::vector<std::filesystem::path> artifacts;
  /// Every file each stage opened, in stage order.
  std::vector<StageInputs> inputs_read;
  std::optional<double> kd_dev_accuracy;
  std::optional<double> ft_dev_accuracy;
  std::optional<double> pruned_dev_accuracy;
  std::optional<BenchReport> bench;
};

/// Output files are written atomically. Refuses to touch existing outputs
/// unless `overwrite` is set; a failing stage leaves earlier artifacts.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace sparsedan
