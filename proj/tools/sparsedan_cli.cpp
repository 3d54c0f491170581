// SPDX-License-Identifier: Apache-2.0
// sparsedan: command-line front end for vocabulary building, training,
// pruning, analysis and benchmarking of sparse DAN students.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sparsedan/analysis.hpp"
#include "sparsedan/binary_io.hpp"
#include "sparsedan/config.hpp"
#include "sparsedan/dataset.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/featurize.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/pipeline.hpp"
#include "sparsedan/prune.hpp"
#include "sparsedan/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sparsedan;

namespace {

bool g_json = false;

// Prints `report` as JSON under --json, otherwise the human summary.
void emit(const ordered_json& report, const std::string& text) {
  if (g_json) {
    std::cout << report.dump(2) << '\n';
  } else {
    std::cout << text;
  }
}

std::optional<std::size_t> cutoff_of(std::size_t value) {
  return value == 0 ? std::nullopt : std::optional<std::size_t>(value);
}

ordered_json params_json(const ParamCount& p) {
  return {{"total", p.total}, {"sparse", p.sparse}, {"dense", p.dense}};
}

std::string params_text(const ParamCount& p) {
  std::ostringstream s;
  s << p.total << " parameters (" << p.sparse << " sparse, " << p.dense << " dense)";
  return s.str();
}

void refuse_existing(const fs::path& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw ConfigError("output '" + path.string() + "' already exists (pass --overwrite)");
  }
}

std::vector<std::uint64_t> frequencies_from(const NgramVocab& vocab, VocabSource source,
                                            const std::vector<fs::path>& train,
                                            const std::vector<fs::path>& corpus) {
  if (train.empty()) throw ConfigError("--train is required to rank by frequency");
  std::vector<fs::path> files = train;
  if (source == VocabSource::CorpusAndTrain) {
    if (corpus.empty()) throw ConfigError("--freq-source corpus+train needs --corpus");
    files.insert(files.end(), corpus.begin(), corpus.end());
  }
  return ngram_frequencies(stream_documents(files), vocab);
}

// ---------------------------------------------------------------------------
// vocab

struct VocabBuildArgs {
  std::vector<fs::path> inputs;
  std::uint32_t nmin = 1, nmax = 4;
  std::size_t topk = 1'000'000;
  std::string source = "corpus+train";
  std::string tie = "lex-asc";
  std::size_t workers = 1;
  std::size_t max_in_memory = 0;
  fs::path spill_dir = fs::temp_directory_path();
  fs::path out;
};

void run_vocab_build(const VocabBuildArgs& a) {
  VocabConfig cfg;
  cfg.range = NgramRange{a.nmin, a.nmax};
  cfg.top_k = a.topk;
  cfg.source = parse_vocab_source(a.source);
  cfg.tie_break = parse_tie_break(a.tie);
  cfg.workers = a.workers;
  cfg.max_in_memory = a.max_in_memory;
  cfg.spill_dir = a.spill_dir;
  cfg.validate();

  std::optional<NgramCounter::Result> built;
  if (a.workers > 1 && a.max_in_memory == 0) {
    std::vector<std::string> docs;
    for (const auto& f : a.inputs) {
      auto d = read_documents(f);
      std::move(d.begin(), d.end(), std::back_inserter(docs));
    }
    NgramCounter::Result r{build_vocab(docs, cfg), {}};
    r.stats.document_count = docs.size();
    built.emplace(std::move(r));
  } else {
    NgramCounter counter(cfg);
    auto source = stream_documents(a.inputs);
    std::string doc;
    while (source(doc)) counter.add(doc);
    built.emplace(counter.finish());
  }
  save_vocab(built->vocab, a.out);

  ordered_json j;
  j["out"] = a.out.string();
  j["entries"] = built->vocab.size();
  j["documents"] = built->stats.document_count;
  j["tokens"] = built->stats.token_count;
  ordered_json per_order = ordered_json::object();
  for (const auto& [order, n] : built->stats.distinct_ngrams_per_order) {
    per_order[std::to_string(order)] = n;
  }
  j["distinct_ngrams_per_order"] = per_order;
  std::ostringstream text;
  text << "wrote " << built->vocab.size() << " n-grams to " << a.out.string() << " from "
       << built->stats.document_count << " documents\n";
  emit(j, text.str());
}

void run_vocab_stats(const fs::path& vocab_path, const std::vector<fs::path>& inputs,
                     std::size_t show) {
  const NgramVocab vocab = load_vocab(vocab_path);
  ordered_json j;
  j["entries"] = vocab.size();
  j["n_range"] = {vocab.range().min, vocab.range().max};
  j["source"] = std::string(to_string(vocab.source()));
  j["tie_break"] = std::string(to_string(vocab.tie_break()));
  ordered_json per_order = ordered_json::object();
  std::size_t previous = 0;
  for (std::size_t n = vocab.range().min; n <= vocab.range().max; ++n) {
    const std::size_t upto = vocab.count_up_to_order(n);
    per_order[std::to_string(n)] = upto - previous;
    previous = upto;
  }
  j["entries_per_order"] = per_order;
  ordered_json top = ordered_json::array();
  for (std::uint32_t id = 0; id < std::min<std::size_t>(show, vocab.size()); ++id) {
    top.push_back({{"id", id}, {"ngram", vocab.entry(id).ngram}, {"frequency", vocab.entry(id).frequency}});
  }
  j["top"] = top;

  std::ostringstream text;
  text << vocab.size() << " entries, n-gram range " << vocab.range().min << "-"
       << vocab.range().max << ", source " << to_string(vocab.source()) << '\n';
  for (const auto& [order, count] : per_order.items()) {
    text << "  order " << order << ": " << count.get<std::size_t>() << '\n';
  }
  for (const auto& e : top) {
    text << "  #" << e["id"].get<std::uint32_t>() << "  " << e["ngram"].get<std::string>() << "  "
         << e["frequency"].get<std::uint64_t>() << '\n';
  }

  if (!inputs.empty()) {
    std::uint64_t total = 0, matched = 0;
    auto docs = stream_documents(inputs);
    std::string doc;
    while (docs(doc)) {
      const auto ex = featurize(doc, vocab);
      total += ex.total_ngrams;
      matched += ex.matched_ngrams;
    }
    j["input_ngrams"] = total;
    j["input_matched"] = matched;
    const double cov = total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    j["input_coverage"] = total ? ordered_json(cov) : ordered_json(nullptr);
    text << "input coverage: " << matched << "/" << total << '\n';
  }
  emit(j, text.str());
}

// ---------------------------------------------------------------------------
// featurize

void run_featurize(const fs::path& vocab_path, const fs::path& input, std::size_t ncutoff,
                   const std::optional<fs::path>& stats_out, const std::optional<fs::path>& out,
                   std::size_t workers) {
  const NgramVocab vocab = load_vocab(vocab_path);
  const auto records = read_jsonl(input);
  const auto examples = [&] {
    std::vector<Example> ex;
    bool any_pair = false;
    for (const auto& r : records) any_pair |= r.is_pair();
    if (any_pair || workers <= 1) return to_examples(records, vocab, cutoff_of(ncutoff));
    const auto texts = texts_of(records);
    for (auto& f : featurize_stream(texts, vocab, workers, cutoff_of(ncutoff))) ex.emplace_back(std::move(f));
    return ex;
  }();

  std::ostringstream csv, jsonl;
  csv << "line,total_ngrams,matched_ngrams,coverage\n";
  std::uint64_t total = 0, matched = 0, undefined = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::size_t t = 0, m = 0;
    ordered_json row;
    row["line"] = records[i].line;
    if (const auto* single = std::get_if<FeaturizedExample>(&examples[i])) {
      t = single->total_ngrams;
      m = single->matched_ngrams;
      row["ids"] = single->ids;
    } else {
      const auto& pair = std::get<PairExample>(examples[i]);
      t = pair.left.total_ngrams + pair.right.total_ngrams;
      m = pair.left.matched_ngrams + pair.right.matched_ngrams;
      row["ids1"] = pair.left.ids;
      row["ids2"] = pair.right.ids;
    }
    total += t;
    matched += m;
    csv << records[i].line << ',' << t << ',' << m << ',';
    if (t == 0) {
      ++undefined;
    } else {
      csv << static_cast<double>(m) / static_cast<double>(t);
    }
    csv << '\n';
    row["total_ngrams"] = t;
    row["matched_ngrams"] = m;
    jsonl << row.dump() << '\n';
  }
  if (stats_out) io::write_file_atomic(*stats_out, csv.str());
  if (out) io::write_file_atomic(*out, jsonl.str());

  ordered_json j;
  j["examples"] = examples.size();
  j["total_ngrams"] = total;
  j["matched_ngrams"] = matched;
  j["undefined_coverage"] = undefined;
  std::ostringstream text;
  text << "featurized " << examples.size() << " examples, " << matched << "/" << total
       << " n-grams in vocabulary";
  if (undefined) text << ", " << undefined << " without any n-gram";
  text << '\n';
  emit(j, text.str());
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::optional<fs::path> model_config;
  std::optional<fs::path> vocab;
  std::optional<fs::path> model;
  std::optional<fs::path> soft_labels;
  std::optional<fs::path> train;
  std::optional<fs::path> dev;
  fs::path out;
  std::optional<fs::path> metrics;
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps, epochs, batch, eval_interval;
  std::optional<double> lr;
  std::size_t workers = 1;
  bool overwrite = false;
};

TrainConfig train_config_for(const TrainArgs& a, LossMode mode, const KeyValueConfig& cfg) {
  TrainConfig tc = train_config_from(cfg, mode == LossMode::KD ? "kd" : "ft", mode);
  tc.mode = mode;
  if (a.steps) tc.steps = *a.steps;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch) tc.batch_size = *a.batch;
  if (a.eval_interval) tc.eval_interval = *a.eval_interval;
  if (a.lr) tc.adam.lr = *a.lr;
  tc.workers = a.workers;
  // Stage seeds follow the pipeline's offsets.
  tc.seed = a.seed + (mode == LossMode::KD ? 2 : 3);
  tc.validate();
  return tc;
}

DanModel fresh_model(const TrainArgs& a, const KeyValueConfig& cfg) {
  if (!a.vocab) throw ConfigError("--vocab is required to create a new model");
  auto vocab = std::make_shared<const NgramVocab>(load_vocab(*a.vocab));
  DanConfig mc = model_config_from(cfg, "model");
  mc.vocab_size = vocab->size();
  return DanModel(std::move(vocab), mc, a.seed + 1);
}

void run_train(const TrainArgs& a, LossMode mode) {
  refuse_existing(a.out, a.overwrite);
  KeyValueConfig cfg;
  if (a.model_config) cfg = KeyValueConfig::load(*a.model_config);
  static constexpr std::string_view kSections[] = {"model", "kd", "ft"};
  for (const auto& key : cfg.keys()) {
    const auto section = key.substr(0, key.find('.'));
    if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections)) {
      throw ConfigError(cfg.origin() + ": unknown key '" + key + "'");
    }
  }
  const TrainConfig tc = train_config_for(a, mode, cfg);

  std::optional<DanModel> model;
  if (a.model) {
    model.emplace(load_model(*a.model));
    // A shared config file may carry [model]; it only has to agree.
    if (model_config_from(cfg, "model", model->config()) != model->config()) {
      throw ConfigError("[model] settings disagree with the existing --model");
    }
  } else {
    model.emplace(fresh_model(a, cfg));
  }

  const fs::path data = mode == LossMode::KD ? *a.soft_labels : *a.train;
  const auto train_set = to_examples(read_jsonl(data), model->vocab());
  std::vector<Example> dev_set;
  if (a.dev) dev_set = to_examples(read_jsonl(*a.dev), model->vocab());

  const TrainResult result = train(*model, train_set, dev_set, tc);
  save_model(*model, a.out);
  const fs::path metrics = a.metrics ? *a.metrics : fs::path(a.out.string() + ".metrics.csv");
  write_metrics_csv(result.metrics, metrics);

  ordered_json j;
  j["stage"] = std::string(to_string(mode));
  j["out"] = a.out.string();
  j["metrics"] = metrics.string();
  j["steps"] = result.steps_run;
  j["params"] = params_json(model->param_count());
  if (result.best_dev_accuracy) {
    j["best_dev_accuracy"] = *result.best_dev_accuracy;
    j["best_step"] = result.best_step;
  }
  std::ostringstream text;
  text << to_string(mode) << ": " << result.steps_run << " updates, " << params_text(model->param_count());
  if (result.best_dev_accuracy) {
    text << ", best dev accuracy " << *result.best_dev_accuracy << " at step " << result.best_step;
  }
  text << "\nwrote " << a.out.string() << " and " << metrics.string() << '\n';
  emit(j, text.str());
}

// ---------------------------------------------------------------------------
// predict

void run_predict(const fs::path& model_path, const fs::path& input, const fs::path& out,
                 std::size_t ncutoff, std::size_t batch) {
  const DanModel model = load_model(model_path);
  const auto records = read_jsonl(input);
  const std::size_t n = model.config().n_classes;
  std::ostringstream lines;
  lines.precision(17);
  for (std::size_t start = 0; start < records.size(); start += batch) {
    const std::size_t end = std::min(records.size(), start + batch);
    const auto examples = to_examples(std::span(records).subspan(start, end - start), model.vocab(),
                                      cutoff_of(ncutoff));
    const auto probs = model.predict_batch(examples);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      std::vector<double> p(probs.begin() + static_cast<std::ptrdiff_t>(i * n),
                            probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
      ordered_json row;
      row["probs"] = p;
      row["pred"] = argmax<double>(p);
      lines << row.dump() << '\n';
    }
  }
  io::write_file_atomic(out, lines.str());
  emit(ordered_json{{"predictions", records.size()}, {"out", out.string()}},
       "wrote " + std::to_string(records.size()) + " predictions to " + out.string() + "\n");
}

// ---------------------------------------------------------------------------
// prune, cutoff-eval, analyze

struct PruneArgs {
  fs::path model;
  std::string freq_source = "train";
  std::vector<fs::path> train;
  std::vector<fs::path> corpus;
  std::string keep;
  fs::path out;
  std::vector<double> fractions{0.01, 0.05, 0.1, 0.25, 0.5, 1.0};
  std::optional<fs::path> dev;
  std::optional<fs::path> csv;
  bool overwrite = false;
};

void run_prune(const PruneArgs& a) {
  if (a.keep.empty() || a.out.empty()) throw ConfigError("prune needs --keep and --out");
  refuse_existing(a.out, a.overwrite);
  const DanModel model = load_model(a.model);
  PruneSpec spec;
  spec.frequency_source = parse_vocab_source(a.freq_source);
  if (a.keep.find_first_of(".eE") != std::string::npos) {
    spec.keep_fraction = std::stod(a.keep);
  } else {
    spec.keep_count = static_cast<std::size_t>(std::stoull(a.keep));
  }
  spec.frequencies = frequencies_from(model.vocab(), spec.frequency_source, a.train, a.corpus);
  const DanModel pruned = prune_model(model, spec);
  save_model(pruned, a.out);

  ordered_json j;
  j["out"] = a.out.string();
  j["vocab_before"] = model.vocab().size();
  j["vocab_after"] = pruned.vocab().size();
  j["params_before"] = params_json(model.param_count());
  j["params_after"] = params_json(pruned.param_count());
  j["bytes_before"] = fs::file_size(a.model);
  j["bytes_after"] = fs::file_size(a.out);
  emit(j, "kept " + std::to_string(pruned.vocab().size()) + " of " +
              std::to_string(model.vocab().size()) + " n-grams; " +
              params_text(pruned.param_count()) + "\nwrote " + a.out.string() + "\n");
}

void run_prune_sweep(const PruneArgs& a) {
  if (!a.dev) throw ConfigError("prune sweep needs --dev");
  const DanModel model = load_model(a.model);
  const VocabSource source = parse_vocab_source(a.freq_source);
  const auto freqs = frequencies_from(model.vocab(), source, a.train, a.corpus);
  const auto dev = read_jsonl(*a.dev);
  const auto rows = prune_sweep(model, freqs, source, a.fractions, dev);
  if (a.csv) write_prune_sweep_csv(rows, *a.csv);

  ordered_json j = ordered_json::array();
  std::ostringstream text;
  text << "fraction  keep  params  accuracy\n";
  for (const auto& r : rows) {
    j.push_back({{"fraction", r.fraction},
                 {"keep_count", r.keep_count},
                 {"params", params_json(r.params)},
                 {"accuracy", r.accuracy}});
    text << r.fraction << "  " << r.keep_count << "  " << r.params.total << "  " << r.accuracy << '\n';
  }
  emit(j, text.str());
}

void run_cutoff_eval(const fs::path& model_path, const std::vector<std::size_t>& cutoffs,
                     const fs::path& dev_path, const std::optional<fs::path>& csv) {
  const DanModel model = load_model(model_path);
  const auto rows = cutoff_eval(model, read_jsonl(dev_path), cutoffs);
  if (csv) write_cutoff_csv(rows, *csv);
  ordered_json j = ordered_json::array();
  std::ostringstream text;
  text << "cutoff  effective_vocab  accuracy\n";
  for (const auto& r : rows) {
    j.push_back({{"n_cutoff", r.cutoff}, {"effective_vocab", r.effective_vocab}, {"accuracy", r.accuracy}});
    text << r.cutoff << "  " << r.effective_vocab << "  " << r.accuracy << '\n';
  }
  emit(j, text.str());
}

ordered_json nan_as_null(double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); }

void run_analyze_coverage(const fs::path& model_path, const fs::path& dev_path,
                          const std::optional<fs::path>& csv, std::size_t ncutoff) {
  const DanModel model = load_model(model_path);
  const auto report = coverage_vs_loss(model, read_jsonl(dev_path), cutoff_of(ncutoff));
  if (csv) write_coverage_csv(report, *csv);
  ordered_json j;
  j["examples"] = report.total;
  j["undefined_coverage"] = report.undefined_count;
  j["buckets"] = ordered_json::array();
  std::ostringstream text;
  text << "coverage    n  q1  median  q3\n";
  for (const auto& b : report.buckets) {
    j["buckets"].push_back({{"lo", b.lo},
                            {"hi", b.hi},
                            {"count", b.count},
                            {"q1_loss", nan_as_null(b.q1_loss)},
                            {"median_loss", nan_as_null(b.median_loss)},
                            {"q3_loss", nan_as_null(b.q3_loss)}});
    text << b.lo << "-" << b.hi << "  " << b.count << "  " << b.q1_loss << "  " << b.median_loss
         << "  " << b.q3_loss << '\n';
  }
  if (report.undefined_count) text << report.undefined_count << " examples without any n-gram\n";
  emit(j, text.str());
}

// ---------------------------------------------------------------------------
// bench, sweep, pipeline, validate

void run_bench(const fs::path& model_path, const fs::path& input, const BenchOptions& opts,
               const std::optional<fs::path>& json_out) {
  const DanModel model = load_model(model_path);
  const auto records = read_jsonl(input);
  const BenchReport report = bench_inference(model, records, opts);
  const std::string json = to_json(report);
  if (json_out) io::write_file_atomic(*json_out, json + "\n");
  std::ostringstream text;
  text << report.samples_per_second << " samples/s (batch " << report.batch_size << ", "
       << to_string(report.precision) << (report.include_featurize ? ", with featurization" : "")
       << ", " << report.workers << " worker(s)); latency p50 " << report.latency_p50_ms
       << " ms, p99 " << report.latency_p99_ms << " ms\n";
  emit(ordered_json::parse(json), text.str());
}

void run_sweep(const fs::path& grid_path, const std::optional<fs::path>& csv) {
  const KeyValueConfig grid = KeyValueConfig::load(grid_path);
  static constexpr std::string_view kGrid[] = {"vocab_sizes", "embed_dims"};
  grid.reject_unknown("grid", kGrid);
  const auto vocab_sizes = grid.get_size_list("grid.vocab_sizes");
  const auto embed_dims = grid.get_size_list("grid.embed_dims");
  if (vocab_sizes.empty() || embed_dims.empty()) {
    throw ConfigError(grid.origin() + ": grid.vocab_sizes and grid.embed_dims must be non-empty");
  }
  PipelineConfig pc = pipeline_config_from(grid.without_section("grid"), grid_path.parent_path());
  pc.validate();

  std::vector<BudgetConfig> configs;
  for (auto v : vocab_sizes) {
    for (auto d : embed_dims) configs.push_back({v, d});
  }
  std::vector<std::string> vocab_docs;
  std::vector<Record> soft, train_records, dev;
  for (const auto& c : pc.corpus) {
    auto d = read_documents(c);
    std::move(d.begin(), d.end(), std::back_inserter(vocab_docs));
  }
  if (pc.soft_labels) soft = read_jsonl(*pc.soft_labels);
  if (pc.train) train_records = read_jsonl(*pc.train);
  if (pc.dev) dev = read_jsonl(*pc.dev);
  if (pc.corpus.empty()) vocab_docs = texts_of(soft);
  if (pc.train && pc.vocab.source == VocabSource::CorpusAndTrain) {
    auto d = texts_of(train_records);
    std::move(d.begin(), d.end(), std::back_inserter(vocab_docs));
  } else if (pc.vocab.source == VocabSource::TrainOnly) {
    vocab_docs = texts_of(train_records);
  }
  if (dev.empty()) throw ConfigError("sweep needs data.dev");

  SweepRecipe recipe;
  recipe.vocab = pc.vocab;
  recipe.model = pc.model;
  if (pc.run_kd) recipe.kd = pc.kd;
  if (pc.run_ft) recipe.ft = pc.ft;
  recipe.seed = pc.seed;
  const auto rows = budget_sweep(configs, SweepData{vocab_docs, soft, train_records, dev}, recipe);
  if (csv) write_budget_csv(rows, *csv);

  ordered_json j = ordered_json::array();
  std::ostringstream text;
  text << "vocab  embed_dim  params  accuracy\n";
  for (const auto& r : rows) {
    ordered_json row{{"requested_vocab", r.requested_vocab},
                     {"vocab_size", r.vocab_size},
                     {"embed_dim", r.embed_dim},
                     {"params", params_json(r.params)},
                     {"accuracy", r.accuracy}};
    if (!r.error.empty()) row["error"] = r.error;
    j.push_back(row);
    text << r.vocab_size << "  " << r.embed_dim << "  " << r.params.total << "  ";
    if (r.error.empty()) {
      text << r.accuracy << '\n';
    } else {
      text << "failed: " << r.error << '\n';
    }
  }
  emit(j, text.str());
}

struct PipelineArgs {
  fs::path config;
  bool overwrite = false;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
};

void run_pipeline_cmd(const PipelineArgs& a) {
  PipelineConfig pc = pipeline_config_from(KeyValueConfig::load(a.config), a.config.parent_path());
  if (a.seed) pc.seed = *a.seed;
  if (a.out_dir) pc.out_dir = *a.out_dir;
  pc.overwrite = a.overwrite;
  const PipelineResult r = run_pipeline(pc);

  ordered_json j;
  j["artifacts"] = ordered_json::array();
  for (const auto& p : r.artifacts) j["artifacts"].push_back(p.string());
  j["inputs_read"] = ordered_json::object();
  for (const auto& s : r.inputs_read) {
    ordered_json files = ordered_json::array();
    for (const auto& f : s.files) files.push_back(f.string());
    j["inputs_read"][s.stage] = files;
  }
  std::ostringstream text;
  auto report = [&](const char* key, const char* label, const std::optional<double>& v) {
    if (!v) return;
    j[key] = *v;
    text << label << " dev accuracy: " << *v << '\n';
  };
  report("kd_dev_accuracy", "KD", r.kd_dev_accuracy);
  report("ft_dev_accuracy", "FT", r.ft_dev_accuracy);
  report("pruned_dev_accuracy", "pruned", r.pruned_dev_accuracy);
  if (r.bench) {
    j["bench"] = ordered_json::parse(to_json(*r.bench));
    text << "throughput: " << r.bench->samples_per_second << " samples/s\n";
  }
  for (const auto& p : r.artifacts) text << "wrote " << p.string() << '\n';
  emit(j, text.str());
}

int run_validate(const fs::path& input, const std::string& kind, std::size_t n_classes) {
  const auto report =
      validate_data(input, parse_data_kind(kind),
                    n_classes ? std::optional<std::size_t>(n_classes) : std::nullopt);
  ordered_json j;
  j["lines"] = report.lines;
  j["violations"] = report.total_violations;
  j["first_violations"] = ordered_json::array();
  std::ostringstream text;
  for (const auto& v : report.violations) {
    j["first_violations"].push_back({{"line", v.line}, {"message", v.message}});
    text << input.string() << ":" << v.line << ": " << v.message << '\n';
  }
  text << report.lines << " lines, " << report.total_violations << " violation(s)\n";
  emit(j, text.str());
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse n-gram DAN students: vocabulary, distillation, pruning and analysis"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json, "Print machine-readable JSON instead of text");
  app.set_config("--config", "", "TOML file with defaults for any flag ([subcommand] sections)");
  std::size_t threads_default = 1;
  try {
    threads_default = default_threads();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  int exit_code = 0;

  // vocab build / stats
  auto* vocab_cmd = app.add_subcommand("vocab", "Build or inspect an n-gram vocabulary");
  vocab_cmd->require_subcommand(1);
  VocabBuildArgs vb;
  vb.workers = threads_default;
  auto* vocab_build = vocab_cmd->add_subcommand("build", "Count n-grams and keep the top-k");
  vocab_build->add_option("--input", vb.inputs, "Text (one document per line) or JSONL files")
      ->required()
      ->check(CLI::ExistingFile);
  vocab_build->add_option("--nmin", vb.nmin, "Shortest n-gram")->capture_default_str();
  vocab_build->add_option("--nmax", vb.nmax, "Longest n-gram")->capture_default_str();
  vocab_build->add_option("--topk", vb.topk, "Vocabulary size")->capture_default_str();
  vocab_build->add_option("--source", vb.source, "Provenance label: train or corpus+train")
      ->capture_default_str();
  vocab_build->add_option("--tie-break", vb.tie, "lex-asc or lex-desc")->capture_default_str();
  vocab_build->add_option("--workers", vb.workers, "Counting threads")->capture_default_str();
  vocab_build->add_option("--max-in-memory", vb.max_in_memory,
                          "Spill to disk above this many distinct n-grams (0: never)");
  vocab_build->add_option("--spill-dir", vb.spill_dir, "Directory for spilled runs");
  vocab_build->add_option("--out", vb.out, "Output vocabulary file")->required();
  vocab_build->callback([&] { run_vocab_build(vb); });

  fs::path vs_vocab;
  std::vector<fs::path> vs_inputs;
  std::size_t vs_show = 10;
  auto* vocab_stats = vocab_cmd->add_subcommand("stats", "Summarize a vocabulary file");
  vocab_stats->add_option("--vocab", vs_vocab)->required()->check(CLI::ExistingFile);
  vocab_stats->add_option("--input", vs_inputs, "Report n-gram coverage of these files")
      ->check(CLI::ExistingFile);
  vocab_stats->add_option("--show", vs_show, "Number of top entries to list")->capture_default_str();
  vocab_stats->callback([&] { run_vocab_stats(vs_vocab, vs_inputs, vs_show); });

  // featurize
  fs::path fz_vocab, fz_input;
  std::size_t fz_cutoff = 0;
  std::size_t fz_workers = threads_default;
  std::optional<fs::path> fz_stats, fz_out;
  auto* fz = app.add_subcommand("featurize", "Map texts to vocabulary ids and report coverage");
  fz->add_option("--vocab", fz_vocab)->required()->check(CLI::ExistingFile);
  fz->add_option("--input", fz_input, "JSONL dataset")->required()->check(CLI::ExistingFile);
  fz->add_option("--ncutoff", fz_cutoff, "Ignore n-grams longer than this (0: no cutoff)");
  fz->add_option("--stats-out", fz_stats, "Per-example coverage CSV");
  fz->add_option("--out", fz_out, "Per-example ids as JSONL");
  fz->add_option("--workers", fz_workers)->capture_default_str();
  fz->callback([&] { run_featurize(fz_vocab, fz_input, fz_cutoff, fz_stats, fz_out, fz_workers); });

  // train kd / ft
  auto* train_cmd = app.add_subcommand("train", "Distill (kd) or fine-tune (ft) a student");
  train_cmd->require_subcommand(1);
  TrainArgs kd_args, ft_args;
  auto add_common = [&](CLI::App* cmd, TrainArgs& a) {
    a.workers = threads_default;
    cmd->add_option("--model-config", a.model_config, "TOML with [model], [kd] and [ft] sections")
        ->check(CLI::ExistingFile);
    cmd->add_option("--vocab", a.vocab, "Vocabulary for a new model")->check(CLI::ExistingFile);
    cmd->add_option("--dev", a.dev, "Dev JSONL for checkpoint selection")->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out, "Output model file")->required();
    cmd->add_option("--metrics", a.metrics, "Metrics CSV (default: <out>.metrics.csv)");
    cmd->add_option("--seed", a.seed)->capture_default_str();
    cmd->add_option("--steps", a.steps, "Total updates (overrides epochs)");
    cmd->add_option("--epochs", a.epochs);
    cmd->add_option("--batch-size", a.batch);
    cmd->add_option("--eval-interval", a.eval_interval, "Updates between dev evaluations");
    cmd->add_option("--lr", a.lr);
    cmd->add_option("--workers", a.workers, "Gradient threads")->capture_default_str();
    cmd->add_flag("--overwrite", a.overwrite, "Replace an existing output");
  };
  auto* train_kd = train_cmd->add_subcommand("kd", "Fit teacher soft labels");
  add_common(train_kd, kd_args);
  train_kd->add_option("--model", kd_args.model, "Continue from this model")->check(CLI::ExistingFile);
  train_kd->add_option("--soft-labels", kd_args.soft_labels, "Teacher JSONL with probs")
      ->required()
      ->check(CLI::ExistingFile);
  train_kd->callback([&] { run_train(kd_args, LossMode::KD); });
  auto* train_ft = train_cmd->add_subcommand("ft", "Fit gold labels");
  add_common(train_ft, ft_args);
  train_ft->add_option("--model", ft_args.model, "Start from this model (else from scratch)")
      ->check(CLI::ExistingFile);
  train_ft->add_option("--train", ft_args.train, "Labeled JSONL")->required()->check(CLI::ExistingFile);
  train_ft->callback([&] { run_train(ft_args, LossMode::FT); });

  // predict
  fs::path pr_model, pr_input, pr_out;
  std::size_t pr_cutoff = 0, pr_batch = 256;
  auto* predict = app.add_subcommand("predict", "Class probabilities for a JSONL dataset");
  predict->add_option("--model", pr_model)->required()->check(CLI::ExistingFile);
  predict->add_option("--input", pr_input)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", pr_out, "Output JSONL, one line per input line")->required();
  predict->add_option("--ncutoff", pr_cutoff, "Ignore n-grams longer than this (0: no cutoff)");
  predict->add_option("--batch", pr_batch)->capture_default_str();
  predict->callback([&] { run_predict(pr_model, pr_input, pr_out, pr_cutoff, pr_batch); });

  // prune [sweep]
  PruneArgs pa;
  auto* prune = app.add_subcommand("prune", "Drop the least frequent n-grams from a model");
  prune->add_option("--model", pa.model)->required()->check(CLI::ExistingFile);
  prune->add_option("--freq-source", pa.freq_source, "train or corpus+train")->capture_default_str();
  prune->add_option("--train", pa.train, "Files whose n-gram counts rank the vocabulary")
      ->check(CLI::ExistingFile);
  prune->add_option("--corpus", pa.corpus, "Extra files for corpus+train ranking")
      ->check(CLI::ExistingFile);
  prune->add_option("--keep", pa.keep, "Fraction (contains '.') or entry count");
  prune->add_option("--out", pa.out, "Pruned model file");
  prune->add_flag("--overwrite", pa.overwrite);
  auto* prune_sweep_cmd = prune->add_subcommand("sweep", "Accuracy at several keep fractions");
  prune_sweep_cmd->add_option("--fractions", pa.fractions)->delimiter(',');
  prune_sweep_cmd->add_option("--dev", pa.dev)->required()->check(CLI::ExistingFile);
  prune_sweep_cmd->add_option("--csv", pa.csv);
  prune_sweep_cmd->fallthrough();
  prune->callback([&] {
    if (prune->got_subcommand(prune_sweep_cmd)) {
      run_prune_sweep(pa);
    } else {
      run_prune(pa);
    }
  });

  // cutoff-eval
  fs::path ce_model, ce_dev;
  std::vector<std::size_t> ce_cutoffs;
  std::optional<fs::path> ce_csv;
  auto* ce = app.add_subcommand("cutoff-eval", "Dev accuracy with longer n-grams ignored");
  ce->add_option("--model", ce_model)->required()->check(CLI::ExistingFile);
  ce->add_option("--cutoffs", ce_cutoffs)->required()->delimiter(',');
  ce->add_option("--dev", ce_dev)->required()->check(CLI::ExistingFile);
  ce->add_option("--csv", ce_csv);
  ce->callback([&] { run_cutoff_eval(ce_model, ce_cutoffs, ce_dev, ce_csv); });

  // analyze coverage
  auto* analyze = app.add_subcommand("analyze", "Model diagnostics");
  analyze->require_subcommand(1);
  fs::path ac_model, ac_dev;
  std::optional<fs::path> ac_csv;
  std::size_t ac_cutoff = 0;
  auto* coverage = analyze->add_subcommand("coverage", "Loss quartiles by n-gram coverage decile");
  coverage->add_option("--model", ac_model)->required()->check(CLI::ExistingFile);
  coverage->add_option("--dev", ac_dev)->required()->check(CLI::ExistingFile);
  coverage->add_option("--csv", ac_csv);
  coverage->add_option("--ncutoff", ac_cutoff);
  coverage->callback([&] { run_analyze_coverage(ac_model, ac_dev, ac_csv, ac_cutoff); });

  // bench
  fs::path b_model, b_input;
  std::optional<fs::path> b_json;
  std::string b_precision = "fp32";
  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "Steady-state inference throughput");
  bench->add_option("--model", b_model)->required()->check(CLI::ExistingFile);
  bench->add_option("--input", b_input)->required()->check(CLI::ExistingFile);
  bench->add_option("--batch", bo.batch_size)->capture_default_str();
  bench->add_flag("--include-featurize", bo.include_featurize, "Time featurization too");
  bench->add_option("--warmup", bo.warmup_batches)->capture_default_str();
  bench->add_option("--iters", bo.measured_batches, "Measured batches")->capture_default_str();
  bench->add_option("--precision", b_precision, "fp32 or fp64")->capture_default_str();
  bench->add_option("--workers", bo.workers, "Independent inference threads")->capture_default_str();
  bench->add_option("--json", b_json, "Write the report to this JSON file");
  bench->callback([&] {
    bo.precision = parse_precision(b_precision);
    run_bench(b_model, b_input, bo, b_json);
  });

  // sweep
  fs::path sw_grid;
  std::optional<fs::path> sw_csv;
  auto* sweep = app.add_subcommand("sweep", "Train one student per (vocab size, embed dim)");
  sweep->add_option("--grid", sw_grid, "TOML: [grid] plus pipeline sections")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--csv", sw_csv);
  sweep->callback([&] { run_sweep(sw_grid, sw_csv); });

  // pipeline
  PipelineArgs pl;
  auto* pipeline = app.add_subcommand("pipeline", "vocab, KD, FT, prune and bench from one config");
  pipeline->add_option("--config", pl.config, "Pipeline TOML")->required()->check(CLI::ExistingFile);
  pipeline->add_option("--seed", pl.seed, "Override the top-level seed");
  pipeline->add_option("--out-dir", pl.out_dir, "Override out_dir");
  pipeline->add_flag("--overwrite", pl.overwrite, "Replace existing outputs");
  pipeline->callback([&] { run_pipeline_cmd(pl); });

  // validate
  fs::path va_input;
  std::string va_kind = "any";
  std::size_t va_classes = 0;
  auto* validate = app.add_subcommand("validate", "Schema-check a JSONL dataset");
  validate->add_option("--input", va_input)->required();
  validate->add_option("--kind", va_kind, "labeled, soft, unlabeled or any")->capture_default_str();
  validate->add_option("--n-classes", va_classes, "Expected class count (0: infer)");
  validate->callback([&] { exit_code = run_validate(va_input, va_kind, va_classes); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return exit_code;
}
