// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "fixtures.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/vocab.hpp"

using namespace sparsedan;
using namespace sparsedan::testing;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string command = std::string(SPARSEDAN_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) return r;
  char buffer[4096];
  while (std::size_t n = std::fread(buffer, 1, sizeof buffer, pipe)) r.out.append(buffer, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

nlohmann::json cli_json(const std::string& args) {
  const CliRun r = cli("--json " + args);
  EXPECT_EQ(r.code, 0) << args << "\n" << r.out;
  return nlohmann::json::parse(r.out);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    CueWordTask task;
    std::mt19937_64 rng(3);
    const auto unl = draw_samples(task, rng, 600), lab = draw_samples(task, rng, 150),
               dv = draw_samples(task, rng, 150);
    write_lines(dir_ / "corpus.txt", texts(unl));
    write_jsonl(soft_records(unl), dir_ / "soft.jsonl");
    write_jsonl(labeled_records(lab), dir_ / "train.jsonl");
    write_jsonl(labeled_records(dv), dir_ / "dev.jsonl");
    std::ofstream(dir_ / "model.toml") << "[model]\nembed_dim = 8\nhidden = [8]\n"
                                          "[kd]\nbatch_size = 64\nlr = 0.01\n"
                                          "[ft]\nbatch_size = 16\nlr = 0.005\n";
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  TempDir dir_;
};

}  // namespace

TEST_F(Cli, EndToEndStudentWorkflow) {
  auto j = cli_json("vocab build --input " + p("corpus.txt") + " " + p("train.jsonl") +
                    " --nmax 2 --topk 2000 --out " + p("vocab.bin"));
  EXPECT_EQ(j["entries"], 2000);
  EXPECT_EQ(load_vocab(p("vocab.bin")).size(), 2000u);

  j = cli_json("vocab stats --vocab " + p("vocab.bin") + " --input " + p("dev.jsonl"));
  EXPECT_GT(j["input_coverage"].get<double>(), 0.5);

  j = cli_json("featurize --vocab " + p("vocab.bin") + " --input " + p("dev.jsonl") +
               " --ncutoff 1 --stats-out " + p("cov.csv") + " --out " + p("ids.jsonl"));
  EXPECT_EQ(read_file(p("cov.csv")).substr(0, 38), "line,total_ngrams,matched_ngrams,cover");

  j = cli_json("train kd --model-config " + p("model.toml") + " --vocab " + p("vocab.bin") +
               " --soft-labels " + p("soft.jsonl") + " --dev " + p("dev.jsonl") +
               " --epochs 2 --out " + p("kd.bin"));
  EXPECT_EQ(j["stage"], "kd");
  EXPECT_TRUE(fs::exists(p("kd.bin.metrics.csv")));

  j = cli_json("train ft --model-config " + p("model.toml") + " --model " + p("kd.bin") +
               " --train " + p("train.jsonl") + " --dev " + p("dev.jsonl") + " --epochs 1 --out " +
               p("ft.bin"));
  EXPECT_GT(j["best_dev_accuracy"].get<double>(), 0.5);

  cli_json("predict --model " + p("ft.bin") + " --input " + p("dev.jsonl") + " --out " + p("pred.jsonl"));
  std::ifstream preds(p("pred.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(preds, line)) {
    const auto row = nlohmann::json::parse(line);
    EXPECT_EQ(row["probs"].size(), 2u);
    ++n;
  }
  EXPECT_EQ(n, 150u);

  j = cli_json("prune --model " + p("ft.bin") + " --train " + p("train.jsonl") + " --keep 0.1 --out " +
               p("small.bin"));
  EXPECT_EQ(load_model(p("small.bin")).vocab().size(), 200u);

  j = cli_json("prune sweep --model " + p("ft.bin") + " --train " + p("train.jsonl") +
               " --fractions 1.0,0.5 --dev " + p("dev.jsonl") + " --csv " + p("sweep.csv"));
  ASSERT_EQ(j.size(), 2u);
  EXPECT_TRUE(fs::exists(p("sweep.csv")));

  j = cli_json("cutoff-eval --model " + p("ft.bin") + " --cutoffs 1,2 --dev " + p("dev.jsonl"));
  ASSERT_EQ(j.size(), 2u);

  j = cli_json("analyze coverage --model " + p("ft.bin") + " --dev " + p("dev.jsonl") + " --csv " +
               p("coverage.csv"));
  EXPECT_EQ(j["buckets"].size(), 10u);

  j = cli_json("bench --model " + p("ft.bin") + " --input " + p("dev.jsonl") +
               " --batch 32 --warmup 1 --iters 10 --json " + p("bench.json"));
  EXPECT_GT(j["samples_per_second"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(p("bench.json")));
}

TEST_F(Cli, RefusesToOverwriteOutputs) {
  cli_json("vocab build --input " + p("corpus.txt") + " --nmax 1 --out " + p("v.bin"));
  const std::string train = "train ft --model-config " + p("model.toml") + " --vocab " + p("v.bin") +
                            " --train " + p("train.jsonl") + " --epochs 1 --out " + p("m.bin");
  EXPECT_EQ(cli(train).code, 0);
  EXPECT_EQ(cli(train).code, 2);
  EXPECT_EQ(cli(train + " --overwrite").code, 0);
}

TEST_F(Cli, ValidateExitCodes) {
  EXPECT_EQ(cli("validate --input " + p("train.jsonl") + " --kind labeled --n-classes 2").code, 0);
  write_lines(dir_ / "bad.jsonl", {R"({"text": "a", "probs": [0.5, 0.4]})"});
  const CliRun r = cli("--json validate --input " + p("bad.jsonl") + " --kind soft");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.out)["violations"], 1);
}

TEST_F(Cli, PipelineFromConfig) {
  std::ofstream(dir_ / "run.toml") << "seed = 1\nout_dir = \"out\"\n"
                                      "[data]\ncorpus = [\"corpus.txt\"]\nsoft_labels = \"soft.jsonl\"\n"
                                      "train = \"train.jsonl\"\ndev = \"dev.jsonl\"\n"
                                      "[vocab]\nnmax = 2\ntopk = 1000\n"
                                      "[model]\nembed_dim = 4\nhidden = [4]\n"
                                      "[kd]\nbatch_size = 128\nepochs = 1\n"
                                      "[ft]\nepochs = 1\n";
  const auto j = cli_json("pipeline --config " + p("run.toml"));
  EXPECT_TRUE(j["inputs_read"].contains("ft"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "student_ft.bin"));
  EXPECT_EQ(cli("pipeline --config " + p("run.toml")).code, 2);
}

TEST_F(Cli, BadArgumentsFail) {
  EXPECT_NE(cli("vocab build --out " + p("x.bin")).code, 0);
  EXPECT_EQ(cli("vocab build --input " + p("corpus.txt") + " --nmin 3 --nmax 2 --out " + p("x.bin")).code, 2);
  EXPECT_NE(cli("no-such-command").code, 0);
}
