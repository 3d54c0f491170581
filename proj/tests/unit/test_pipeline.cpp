// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fixtures.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/pipeline.hpp"

using namespace sparsedan;
using namespace sparsedan::testing;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  TempDir dir;
  fs::path corpus, soft, train, dev;

  Workspace() {
    CueWordTask task;
    std::mt19937_64 rng(1);
    const auto unl = draw_samples(task, rng, 1500);
    const auto lab = draw_samples(task, rng, 200);
    const auto dv = draw_samples(task, rng, 200);
    corpus = dir / "corpus.txt";
    soft = dir / "soft.jsonl";
    train = dir / "train.jsonl";
    dev = dir / "dev.jsonl";
    write_lines(corpus, texts(unl));
    write_jsonl(soft_records(unl), soft);
    write_jsonl(labeled_records(lab), train);
    write_jsonl(labeled_records(dv), dev);
  }

  PipelineConfig config(const std::string& out) const {
    PipelineConfig c;
    c.corpus = {corpus};
    c.soft_labels = soft;
    c.train = train;
    c.dev = dev;
    c.out_dir = dir / out;
    c.vocab.range = {1, 2};
    c.vocab.top_k = 3000;
    c.model.embed_dim = 8;
    c.model.hidden = {8};
    c.kd.batch_size = 64;
    c.kd.epochs = 2;
    c.kd.steps = 0;
    c.kd.eval_interval = 0;
    c.kd.adam.lr = 0.01;
    c.ft.batch_size = 16;
    c.ft.epochs = 2;
    c.ft.adam.lr = 0.005;
    c.seed = 9;
    return c;
  }
};

bool read_file_named(const PipelineResult& r, const fs::path& p) {
  for (const auto& s : r.inputs_read) {
    for (const auto& f : s.files) {
      if (f == p) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Pipeline, FullRunWritesEveryArtifact) {
  Workspace ws;
  auto c = ws.config("run");
  c.prune_keep_fraction = 0.5;
  c.run_bench = true;
  c.bench.measured_batches = 10;
  c.bench.warmup_batches = 1;
  const auto r = run_pipeline(c);
  for (const char* name : {"vocab.bin", "student.bin", "metrics_kd.csv", "student_ft.bin",
                           "metrics_ft.csv", "student_pruned.bin", "bench.json"}) {
    EXPECT_TRUE(fs::exists(c.out_dir / name)) << name;
  }
  EXPECT_EQ(r.artifacts.size(), 7u);
  ASSERT_TRUE(r.kd_dev_accuracy && r.ft_dev_accuracy && r.pruned_dev_accuracy && r.bench);
  EXPECT_GT(*r.kd_dev_accuracy, 0.6);
  EXPECT_EQ(load_model(c.out_dir / "student_pruned.bin").vocab().size(),
            (load_vocab(c.out_dir / "vocab.bin").size() + 1) / 2);
  const auto bench = nlohmann::json::parse(read_file(c.out_dir / "bench.json"));
  EXPECT_GT(bench["samples_per_second"].get<double>(), 0.0);
}

TEST(Pipeline, SameSeedSameArtifacts) {
  Workspace ws;
  const auto a = ws.config("a"), b = ws.config("b");
  run_pipeline(a);
  run_pipeline(b);
  for (const char* name : {"vocab.bin", "student.bin", "student_ft.bin", "metrics_ft.csv"}) {
    EXPECT_EQ(read_file(a.out_dir / name), read_file(b.out_dir / name)) << name;
  }
}

TEST(Pipeline, RefusesToOverwriteUnlessAsked) {
  Workspace ws;
  auto c = ws.config("run");
  c.run_ft = false;
  c.train.reset();
  run_pipeline(c);
  EXPECT_THROW(run_pipeline(c), ConfigError);
  c.overwrite = true;
  EXPECT_NO_THROW(run_pipeline(c));
}

TEST(Pipeline, PrivacyModeNeverOpensTrainingSet) {
  Workspace ws;
  auto c = ws.config("private");
  c.run_ft = false;
  c.train.reset();
  c.prune_keep_fraction = 0.2;
  const auto r = run_pipeline(c);
  EXPECT_FALSE(read_file_named(r, ws.train));
  EXPECT_TRUE(read_file_named(r, ws.corpus));
  EXPECT_EQ(load_vocab(c.out_dir / "vocab.bin").source(), VocabSource::CorpusAndTrain);
  EXPECT_FALSE(fs::exists(c.out_dir / "student_ft.bin"));
  // Corpus-only vocabulary: every entry occurs in the corpus.
  const auto vocab = load_vocab(c.out_dir / "vocab.bin");
  const auto freq = ngram_frequencies(read_documents(ws.corpus), vocab);
  for (std::size_t id = 0; id < vocab.size(); ++id) EXPECT_EQ(freq[id], vocab.entry(id).frequency);
}

TEST(Pipeline, ValidationNamesTheMissingKey) {
  Workspace ws;
  auto expect_error = [](const PipelineConfig& c, const std::string& key) {
    try {
      c.validate();
      FAIL() << "expected an error mentioning " << key;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  auto c = ws.config("x");
  c.soft_labels.reset();
  expect_error(c, "data.soft_labels");
  c = ws.config("x");
  c.run_kd = false;
  expect_error(c, "data.soft_labels");
  c = ws.config("x");
  c.train.reset();
  expect_error(c, "data.train");
  c = ws.config("x");
  c.run_kd = c.run_ft = false;
  expect_error(c, "stages");
  c = ws.config("x");
  c.run_bench = true;
  c.dev.reset();
  expect_error(c, "data.dev");
  c = ws.config("x");
  c.prune_keep_fraction = 0.0;
  expect_error(c, "prune.keep_fraction");
  c = ws.config("x");
  c.dev = ws.dir / "missing.jsonl";
  expect_error(c, "data.dev");
}

TEST(Pipeline, ConfigFileResolvesRelativePaths) {
  Workspace ws;
  std::ofstream(ws.dir / "run.toml") << R"(
seed = 3
out_dir = "out"
[stages]
kd = true
ft = false
[data]
corpus = ["corpus.txt"]
soft_labels = "soft.jsonl"
dev = "dev.jsonl"
[vocab]
nmax = 2
topk = 100
[model]
embed_dim = 4
hidden = [4]
[kd]
batch_size = 256
epochs = 1
)";
  const auto cfg = KeyValueConfig::load(ws.dir / "run.toml");
  const auto pc = pipeline_config_from(cfg, ws.dir.path());
  EXPECT_EQ(pc.out_dir, ws.dir / "out");
  EXPECT_EQ(pc.corpus, std::vector<fs::path>{ws.corpus});
  EXPECT_EQ(pc.seed, 3u);
  EXPECT_FALSE(pc.run_ft);
  EXPECT_EQ(pc.kd.batch_size, 256u);
  EXPECT_EQ(pc.vocab.range, (NgramRange{1, 2}));
  const auto r = run_pipeline(pc);
  EXPECT_TRUE(fs::exists(ws.dir / "out" / "student.bin"));
  EXPECT_TRUE(r.kd_dev_accuracy.has_value());

  std::istringstream bad("[modle]\nembed_dim = 4\n");
  EXPECT_THROW(pipeline_config_from(KeyValueConfig::parse(bad), ws.dir.path()), ConfigError);
}

TEST(Pipeline, ShippedConfigsParse) {
  const fs::path dir = fs::path(SPARSEDAN_SOURCE_DIR) / "configs";
  const auto full = pipeline_config_from(KeyValueConfig::load(dir / "full.toml"), dir);
  EXPECT_EQ(full.vocab.range, (NgramRange{1, 4}));
  EXPECT_EQ(full.vocab.top_k, 1'000'000u);
  EXPECT_EQ(full.model.embed_dim, 1000u);
  EXPECT_EQ(full.model.hidden, std::vector<std::size_t>{1000});
  EXPECT_EQ(full.kd.batch_size, 2048u);
  EXPECT_DOUBLE_EQ(full.kd.adam.lr, 5e-4);
  EXPECT_EQ(full.kd.steps, 1'000'000u);
  EXPECT_EQ(full.ft.batch_size, 32u);
  EXPECT_EQ(full.ft.epochs, 10u);
  EXPECT_EQ(param_count([&] {
              auto c = full.model;
              c.vocab_size = full.vocab.top_k;
              return c;
            }()).sparse,
            1'000'000'000u);

  const auto desk = pipeline_config_from(KeyValueConfig::load(dir / "desk.toml"), dir);
  EXPECT_EQ(desk.vocab.range, (NgramRange{1, 4}));
  EXPECT_EQ(desk.vocab.top_k, 20'000u);
  EXPECT_EQ(desk.out_dir, dir / "run-desk");
}
