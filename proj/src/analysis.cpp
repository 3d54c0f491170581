// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <limits>
#include <memory>
#include <thread>

#include "sparsedan/binary_io.hpp"
#include "sparsedan/errors.hpp"

namespace sparsedan {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

std::size_t coverage_bucket(std::size_t matched, std::size_t total) noexcept {
  return std::min<std::size_t>(CoverageReport::kBuckets - 1,
                               matched * CoverageReport::kBuckets / total);
}

CoverageReport bucket_coverage(std::span<const CoveragePoint> points) {
  CoverageReport report;
  report.total = points.size();
  std::vector<std::vector<double>> losses(CoverageReport::kBuckets);
  for (const auto& p : points) {
    if (p.total == 0) {
      ++report.undefined_count;
      continue;
    }
    losses[coverage_bucket(p.matched, p.total)].push_back(p.loss);
  }
  for (std::size_t b = 0; b < CoverageReport::kBuckets; ++b) {
    CoverageBucket bucket;
    bucket.lo = static_cast<double>(b) / CoverageReport::kBuckets;
    bucket.hi = static_cast<double>(b + 1) / CoverageReport::kBuckets;
    bucket.count = losses[b].size();
    bucket.q1_loss = quantile(losses[b], 0.25);
    bucket.median_loss = quantile(losses[b], 0.5);
    bucket.q3_loss = quantile(losses[b], 0.75);
    report.buckets.push_back(bucket);
  }
  return report;
}

CoverageReport coverage_vs_loss(const DanModel& model, std::span<const Record> dev,
                                std::optional<std::size_t> n_cutoff) {
  std::vector<CoveragePoint> points;
  points.reserve(dev.size());
  for (const auto& record : dev) {
    if (!record.label) throw DataValidationError("coverage analysis needs labels", record.line);
    const Example ex = to_example(record, model.vocab(), n_cutoff);
    CoveragePoint p;
    if (const auto* single = std::get_if<FeaturizedExample>(&ex)) {
      p.matched = single->matched_ngrams;
      p.total = single->total_ngrams;
    } else {
      const auto& pair = std::get<PairExample>(ex);
      p.matched = pair.left.matched_ngrams + pair.right.matched_ngrams;
      p.total = pair.left.total_ngrams + pair.right.total_ngrams;
    }
    p.loss = ft_loss(*record.label, model.predict(ex));
    points.push_back(p);
  }
  return bucket_coverage(points);
}

void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "bucket_lo,bucket_hi,count,q1_loss,median_loss,q3_loss\n";
  out.precision(10);
  for (const auto& b : report.buckets) {
    out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.q1_loss << ',' << b.median_loss
        << ',' << b.q3_loss << '\n';
  }
  out << "undefined,," << report.undefined_count << ",,,\n";
  io::write_file_atomic(path, out.str());
}

std::vector<BudgetRow> budget_sweep(std::span<const BudgetConfig> configs, const SweepData& data,
                                    const SweepRecipe& recipe) {
  std::vector<BudgetRow> rows;
  for (const auto& cfg : configs) {
    BudgetRow row;
    row.requested_vocab = cfg.vocab_size;
    row.embed_dim = cfg.embed_dim;
    try {
      VocabConfig vc = recipe.vocab;
      vc.top_k = cfg.vocab_size;
      auto vocab = std::make_shared<const NgramVocab>(build_vocab(data.vocab_documents, vc));
      DanConfig mc = recipe.model;
      mc.embed_dim = cfg.embed_dim;
      DanModel model(vocab, mc, recipe.seed + 1);
      const auto dev = to_examples(data.dev, *vocab);
      if (recipe.kd) {
        const auto kd_set = to_examples(data.soft_labels, *vocab);
        TrainConfig tc = *recipe.kd;
        tc.seed = recipe.seed + 2;
        train(model, kd_set, dev, tc);
      }
      if (recipe.ft) {
        const auto ft_set = to_examples(data.train, *vocab);
        TrainConfig tc = *recipe.ft;
        tc.seed = recipe.seed + 3;
        train(model, ft_set, dev, tc);
      }
      row.vocab_size = vocab->size();
      row.params = model.param_count();
      row.accuracy = evaluate(model, dev).accuracy;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_budget_csv(std::span<const BudgetRow> rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "requested_vocab,vocab_size,embed_dim,params_total,params_sparse,params_dense,"
         "dev_accuracy,error\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.requested_vocab << ',' << r.vocab_size << ',' << r.embed_dim << ',' << r.params.total
        << ',' << r.params.sparse << ',' << r.params.dense << ',' << r.accuracy << ",\"";
    for (char c : r.error) out << (c == '"' ? "\"\"" : std::string(1, c));
    out << "\"\n";
  }
  io::write_file_atomic(path, out.str());
}

std::string_view to_string(Precision precision) noexcept {
  return precision == Precision::Fp32 ? "fp32" : "fp64";
}

Precision parse_precision(std::string_view text) {
  if (text == "fp32") return Precision::Fp32;
  if (text == "fp64") return Precision::Fp64;
  throw ConfigError("unsupported precision '" + std::string(text) + "' (fp32 or fp64)");
}

namespace {

using Clock = std::chrono::steady_clock;

struct WorkerTiming {
  std::vector<double> latencies_ms;
  double checksum = 0.0;
};

template <typename T>
WorkerTiming run_worker(const BasicDanModel<T>& model, std::span<const Record> dataset,
                        std::span<const Example> prefeaturized, const BenchOptions& options,
                        std::size_t offset) {
  WorkerTiming timing;
  const std::size_t n = dataset.size();
  const std::size_t bs = options.batch_size;
  std::vector<Example> batch(bs);
  std::size_t cursor = offset % n;
  const std::size_t total = options.warmup_batches + options.measured_batches;
  for (std::size_t b = 0; b < total; ++b) {
    const auto start = Clock::now();
    std::span<const Example> input;
    if (options.include_featurize) {
      for (std::size_t i = 0; i < bs; ++i) {
        batch[i] = to_example(dataset[(cursor + i) % n], model.vocab(), options.n_cutoff);
      }
      input = batch;
    } else if (cursor + bs <= n) {
      input = prefeaturized.subspan(cursor, bs);
    } else {
      for (std::size_t i = 0; i < bs; ++i) batch[i] = prefeaturized[(cursor + i) % n];
      input = batch;
    }
    const auto probs = model.predict_batch(input);
    const auto stop = Clock::now();
    timing.checksum += static_cast<double>(probs[0]);
    if (b >= options.warmup_batches) {
      timing.latencies_ms.push_back(
          std::chrono::duration<double, std::milli>(stop - start).count());
    }
    cursor = (cursor + bs) % n;
  }
  return timing;
}

template <typename T>
BenchReport bench_with(const BasicDanModel<T>& model, std::span<const Record> dataset,
                       const BenchOptions& options) {
  std::vector<Example> prefeaturized;
  if (!options.include_featurize) prefeaturized = to_examples(dataset, model.vocab(), options.n_cutoff);

  std::vector<WorkerTiming> timings(options.workers);
  const auto start = Clock::now();
  if (options.workers == 1) {
    timings[0] = run_worker(model, dataset, prefeaturized, options, 0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < options.workers; ++w) {
      threads.emplace_back([&, w] {
        timings[w] = run_worker(model, dataset, prefeaturized, options, w * options.batch_size);
      });
    }
    for (auto& t : threads) t.join();
  }
  (void)start;

  BenchReport report;
  std::vector<double> all;
  double worst_worker_ms = 0.0;
  double checksum = 0.0;
  for (const auto& t : timings) {
    all.insert(all.end(), t.latencies_ms.begin(), t.latencies_ms.end());
    double sum = 0.0;
    for (double ms : t.latencies_ms) sum += ms;
    worst_worker_ms = std::max(worst_worker_ms, sum);
    checksum += t.checksum;
  }
  // Aggregate throughput: all measured samples over the slowest worker's
  // measured time.
  const double samples = static_cast<double>(options.workers * options.measured_batches *
                                             options.batch_size);
  report.samples_per_second = samples / (worst_worker_ms / 1000.0);
  report.batch_size = options.batch_size;
  report.precision = options.precision;
  report.warmup_batches = options.warmup_batches;
  report.measured_batches = options.measured_batches;
  report.workers = options.workers;
  report.include_featurize = options.include_featurize;
  report.latency_p50_ms = quantile(all, 0.50);
  report.latency_p90_ms = quantile(all, 0.90);
  report.latency_p99_ms = quantile(all, 0.99);
  report.device_note = "cpu, " + std::to_string(std::thread::hardware_concurrency()) +
                       " hardware threads" + (std::isfinite(checksum) ? "" : " (non-finite output)");
  return report;
}

}  // namespace

BenchReport bench_inference(const DanModel& model, std::span<const Record> dataset,
                            const BenchOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (dataset.size() < options.batch_size) {
    throw ConfigError("dataset has " + std::to_string(dataset.size()) +
                      " examples, fewer than one batch of " + std::to_string(options.batch_size));
  }
  if (options.measured_batches < 10) throw ConfigError("measure at least 10 batches");
  if (options.workers == 0) throw ConfigError("workers must be positive");
  if (options.precision == Precision::Fp32) {
    const DanModel32 model32 = model.cast<float>();
    return bench_with(model32, dataset, options);
  }
  return bench_with(model, dataset, options);
}

std::string to_json(const BenchReport& report) {
  nlohmann::ordered_json j;
  j["samples_per_second"] = report.samples_per_second;
  j["batch_size"] = report.batch_size;
  j["precision"] = std::string(to_string(report.precision));
  j["include_featurize"] = report.include_featurize;
  j["workers"] = report.workers;
  j["warmup_batches"] = report.warmup_batches;
  j["measured_batches"] = report.measured_batches;
  j["latency_ms"] = {{"p50", report.latency_p50_ms},
                     {"p90", report.latency_p90_ms},
                     {"p99", report.latency_p99_ms}};
  j["device"] = report.device_note;
  return j.dump(2);
}

}  // namespace sparsedan
