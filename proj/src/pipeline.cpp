// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/pipeline.hpp"

#include <algorithm>
#include <memory>

#include "sparsedan/binary_io.hpp"
#include "sparsedan/dataset.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/prune.hpp"

namespace fs = std::filesystem;

namespace sparsedan {
namespace {

void require_file(const std::optional<fs::path>& path, std::string_view key) {
  if (path && !fs::is_regular_file(*path)) {
    throw ConfigError(std::string(key) + ": no such file '" + path->string() + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void PipelineConfig::validate() const {
  if (!run_kd && !run_ft) throw ConfigError("stages.kd and stages.ft are both disabled");
  if (run_kd && !soft_labels) throw ConfigError("data.soft_labels is required when stages.kd is on");
  if (!run_kd && soft_labels) {
    throw ConfigError("data.soft_labels is set but stages.kd is off");
  }
  if (run_ft && !train) throw ConfigError("data.train is required when stages.ft is on");
  if (vocab.source == VocabSource::TrainOnly && !train) {
    throw ConfigError("vocab.source = \"train\" needs data.train");
  }
  if (corpus.empty() && !soft_labels && !train) {
    throw ConfigError("no vocabulary documents: set data.corpus, data.soft_labels or data.train");
  }
  if (run_bench && !dev) throw ConfigError("bench.enabled needs data.dev");
  if (prune_keep_fraction && !(*prune_keep_fraction > 0.0 && *prune_keep_fraction <= 1.0)) {
    throw ConfigError("prune.keep_fraction must lie in (0, 1]");
  }
  for (const auto& c : corpus) require_file(c, "data.corpus");
  require_file(train, "data.train");
  require_file(dev, "data.dev");
  require_file(soft_labels, "data.soft_labels");
  vocab.validate();
  kd.validate();
  ft.validate();
}

PipelineConfig pipeline_config_from(const KeyValueConfig& cfg, const fs::path& base_dir) {
  static constexpr std::string_view kTop[] = {"seed", "out_dir"};
  static constexpr std::string_view kSections[] = {"stages", "data", "vocab", "model",
                                                   "kd",     "ft",   "prune", "bench"};
  cfg.reject_unknown("", kTop);
  for (const auto& key : cfg.keys()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string_view section = std::string_view(key).substr(0, dot);
    if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections)) {
      throw ConfigError(cfg.origin() + ": unknown section '" + std::string(section) + "'");
    }
  }
  static constexpr std::string_view kStages[] = {"kd", "ft"};
  static constexpr std::string_view kData[] = {"corpus", "train", "dev", "soft_labels"};
  static constexpr std::string_view kPrune[] = {"keep_fraction"};
  static constexpr std::string_view kBench[] = {"enabled",  "batch_size", "warmup",
                                                "iters",    "precision",  "include_featurize",
                                                "workers"};
  cfg.reject_unknown("stages", kStages);
  cfg.reject_unknown("data", kData);
  cfg.reject_unknown("prune", kPrune);
  cfg.reject_unknown("bench", kBench);

  PipelineConfig pc;
  pc.seed = cfg.get_u64("seed", 0);
  pc.out_dir = resolve(base_dir, cfg.get_or("out_dir", "run"));
  pc.run_kd = cfg.get_bool("stages.kd", true);
  pc.run_ft = cfg.get_bool("stages.ft", true);
  for (const auto& c : cfg.get_list("data.corpus")) pc.corpus.push_back(resolve(base_dir, c));
  if (auto v = cfg.get("data.train")) pc.train = resolve(base_dir, *v);
  if (auto v = cfg.get("data.dev")) pc.dev = resolve(base_dir, *v);
  if (auto v = cfg.get("data.soft_labels")) pc.soft_labels = resolve(base_dir, *v);

  VocabConfig vocab_base;
  vocab_base.workers = default_threads();
  pc.vocab = vocab_config_from(cfg, "vocab", vocab_base);
  pc.model = model_config_from(cfg, "model");
  pc.kd = train_config_from(cfg, "kd", LossMode::KD);
  pc.ft = train_config_from(cfg, "ft", LossMode::FT);

  if (cfg.has("prune.keep_fraction")) pc.prune_keep_fraction = cfg.get_double("prune.keep_fraction", 1.0);
  pc.run_bench = cfg.get_bool("bench.enabled", false);
  pc.bench.batch_size = cfg.get_size("bench.batch_size", pc.bench.batch_size);
  pc.bench.warmup_batches = cfg.get_size("bench.warmup", pc.bench.warmup_batches);
  pc.bench.measured_batches = cfg.get_size("bench.iters", pc.bench.measured_batches);
  if (auto v = cfg.get("bench.precision")) pc.bench.precision = parse_precision(*v);
  pc.bench.include_featurize = cfg.get_bool("bench.include_featurize", false);
  pc.bench.workers = cfg.get_size("bench.workers", 1);
  return pc;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  PipelineResult result;

  const fs::path vocab_path = config.out_dir / "vocab.bin";
  const fs::path kd_path = config.out_dir / "student.bin";
  const fs::path ft_path = config.out_dir / "student_ft.bin";
  const fs::path kd_metrics = config.out_dir / "metrics_kd.csv";
  const fs::path ft_metrics = config.out_dir / "metrics_ft.csv";
  const fs::path pruned_path = config.out_dir / "student_pruned.bin";
  const fs::path bench_path = config.out_dir / "bench.json";

  std::vector<fs::path> planned{vocab_path};
  if (config.run_kd) planned.insert(planned.end(), {kd_path, kd_metrics});
  if (config.run_ft) planned.insert(planned.end(), {ft_path, ft_metrics});
  if (config.prune_keep_fraction) planned.push_back(pruned_path);
  if (config.run_bench) planned.push_back(bench_path);
  if (!config.overwrite) {
    for (const auto& p : planned) {
      if (fs::exists(p)) {
        throw ConfigError("output '" + p.string() + "' already exists (pass --overwrite)");
      }
    }
  }
  fs::create_directories(config.out_dir);

  // Loads each input at most once and logs which stage first needed it.
  std::optional<std::vector<Record>> train_records, dev_records, soft_records;
  auto load = [&](std::optional<std::vector<Record>>& slot, const fs::path& path,
                  StageInputs& stage) -> const std::vector<Record>& {
    stage.files.push_back(path);
    if (!slot) slot = read_jsonl(path);
    return *slot;
  };

  // Vocabulary.
  StageInputs vocab_stage{"vocab", {}};
  std::vector<std::string> documents;
  if (config.vocab.source == VocabSource::CorpusAndTrain) {
    if (!config.corpus.empty()) {
      for (const auto& c : config.corpus) {
        vocab_stage.files.push_back(c);
        auto docs = read_documents(c);
        std::move(docs.begin(), docs.end(), std::back_inserter(documents));
      }
    } else if (config.soft_labels) {
      auto docs = texts_of(load(soft_records, *config.soft_labels, vocab_stage));
      std::move(docs.begin(), docs.end(), std::back_inserter(documents));
    }
  }
  if (config.train) {
    auto docs = texts_of(load(train_records, *config.train, vocab_stage));
    std::move(docs.begin(), docs.end(), std::back_inserter(documents));
  }
  auto vocab = std::make_shared<const NgramVocab>(build_vocab(documents, config.vocab));
  documents.clear();
  documents.shrink_to_fit();
  save_vocab(*vocab, vocab_path);
  result.artifacts.push_back(vocab_path);
  result.inputs_read.push_back(std::move(vocab_stage));

  DanConfig model_config = config.model;
  model_config.vocab_size = vocab->size();
  DanModel model(vocab, model_config, config.seed + 1);

  // Stage 2: distillation on teacher soft labels.
  if (config.run_kd) {
    StageInputs stage{"kd", {}};
    const auto kd_set = to_examples(load(soft_records, *config.soft_labels, stage), *vocab);
    std::vector<Example> dev_set;
    if (config.dev) dev_set = to_examples(load(dev_records, *config.dev, stage), *vocab);
    TrainConfig tc = config.kd;
    tc.mode = LossMode::KD;
    tc.seed = config.seed + 2;
    const TrainResult tr = train(model, kd_set, dev_set, tc);
    save_model(model, kd_path);
    write_metrics_csv(tr.metrics, kd_metrics);
    result.artifacts.insert(result.artifacts.end(), {kd_path, kd_metrics});
    if (!dev_set.empty()) result.kd_dev_accuracy = evaluate(model, dev_set).accuracy;
    result.inputs_read.push_back(std::move(stage));
  }

  // Stage 3: fine-tuning on labeled task data.
  if (config.run_ft) {
    StageInputs stage{"ft", {}};
    const auto ft_set = to_examples(load(train_records, *config.train, stage), *vocab);
    std::vector<Example> dev_set;
    if (config.dev) dev_set = to_examples(load(dev_records, *config.dev, stage), *vocab);
    TrainConfig tc = config.ft;
    tc.mode = LossMode::FT;
    tc.seed = config.seed + 3;
    const TrainResult tr = train(model, ft_set, dev_set, tc);
    save_model(model, ft_path);
    write_metrics_csv(tr.metrics, ft_metrics);
    result.artifacts.insert(result.artifacts.end(), {ft_path, ft_metrics});
    if (!dev_set.empty()) result.ft_dev_accuracy = evaluate(model, dev_set).accuracy;
    result.inputs_read.push_back(std::move(stage));
  }

  if (config.prune_keep_fraction) {
    StageInputs stage{"prune", {}};
    PruneSpec spec;
    spec.keep_fraction = *config.prune_keep_fraction;
    if (config.train) {
      spec.frequency_source = VocabSource::TrainOnly;
      spec.frequencies =
          ngram_frequencies(texts_of(load(train_records, *config.train, stage)), *vocab);
    } else {
      // Privacy mode: rank by the counts the vocabulary was built from.
      spec.frequency_source = vocab->source();
      for (std::size_t id = 0; id < vocab->size(); ++id) {
        spec.frequencies.push_back(vocab->entry(static_cast<std::uint32_t>(id)).frequency);
      }
    }
    const DanModel pruned = prune_model(model, spec);
    save_model(pruned, pruned_path);
    result.artifacts.push_back(pruned_path);
    if (config.dev) {
      const auto dev_set = to_examples(load(dev_records, *config.dev, stage), pruned.vocab());
      result.pruned_dev_accuracy = evaluate(pruned, dev_set).accuracy;
    }
    result.inputs_read.push_back(std::move(stage));
  }

  if (config.run_bench) {
    StageInputs stage{"bench", {}};
    const auto& dev = load(dev_records, *config.dev, stage);
    result.bench = bench_inference(model, dev, config.bench);
    io::write_file_atomic(bench_path, to_json(*result.bench) + "\n");
    result.artifacts.push_back(bench_path);
    result.inputs_read.push_back(std::move(stage));
  }
  return result;
}

}  // namespace sparsedan
