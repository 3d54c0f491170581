// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "sparsedan/config.hpp"
#include "sparsedan/errors.hpp"

using namespace sparsedan;

namespace {

KeyValueConfig parse(const std::string& text) {
  std::istringstream in(text);
  return KeyValueConfig::parse(in, "test.toml");
}

}  // namespace

TEST(KeyValueConfig, SectionsPrefixKeys) {
  const auto cfg = parse(R"(
seed = 7
# comment
[model]
embed_dim = 64
hidden = [128, 32]
pooling = "attentive"

[vocab]
nmin = 1
nmax = 3
)");
  EXPECT_EQ(cfg.get_u64("seed", 0), 7u);
  EXPECT_EQ(cfg.get_size("model.embed_dim", 0), 64u);
  EXPECT_EQ(cfg.get_size_list("model.hidden"), (std::vector<std::size_t>{128, 32}));
  EXPECT_EQ(cfg.get("model.pooling"), "attentive");
  EXPECT_FALSE(cfg.has("embed_dim"));
  EXPECT_EQ(cfg.keys().front(), "seed");
}

TEST(KeyValueConfig, TypedAccessorsRejectGarbage) {
  const auto cfg = parse("a = 12x\nb = -3\nc = maybe\nd = 1e-3\n");
  EXPECT_THROW(cfg.get_size("a", 0), ConfigError);
  EXPECT_THROW(cfg.get_size("b", 0), ConfigError);
  EXPECT_THROW(cfg.get_bool("c", false), ConfigError);
  EXPECT_DOUBLE_EQ(cfg.get_double("d", 0), 1e-3);
  EXPECT_EQ(cfg.get_size("missing", 5), 5u);
}

TEST(KeyValueConfig, BoolsAndOverrides) {
  auto cfg = parse("[stages]\nkd = true\nft = 0\n");
  EXPECT_TRUE(cfg.get_bool("stages.kd", false));
  EXPECT_FALSE(cfg.get_bool("stages.ft", true));
  cfg.set("stages.ft", {"true"});
  EXPECT_TRUE(cfg.get_bool("stages.ft", false));
}

TEST(KeyValueConfig, UnknownKeysAreNamed) {
  const auto cfg = parse("[model]\nembed_dim = 4\nembd_dim = 5\n");
  const std::vector<std::string_view> known{"embed_dim"};
  try {
    cfg.reject_unknown("model", known);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.embd_dim"), std::string::npos);
  }
  EXPECT_EQ(cfg.without_section("model").keys().size(), 0u);
}

TEST(SectionReaders, VocabAndModel) {
  const auto cfg = parse(R"(
[vocab]
nmin = 2
nmax = 3
topk = 500
tie_break = "lex-desc"
source = "train"
[model]
embed_dim = 16
hidden = [8, 4]
n_classes = 3
pooling = "max"
pair_mode = true
)");
  const auto v = vocab_config_from(cfg);
  EXPECT_EQ(v.range, (NgramRange{2, 3}));
  EXPECT_EQ(v.top_k, 500u);
  EXPECT_EQ(v.tie_break, TieBreak::LexicographicDescending);
  EXPECT_EQ(v.source, VocabSource::TrainOnly);
  const auto m = model_config_from(cfg);
  EXPECT_EQ(m.embed_dim, 16u);
  EXPECT_EQ(m.hidden, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(m.n_classes, 3u);
  EXPECT_EQ(m.pooling, Pooling::Max);
  EXPECT_TRUE(m.pair_mode);
}

TEST(SectionReaders, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(vocab_config_from(parse("[vocab]\nnmin = 3\nnmax = 2\n")), ConfigError);
  EXPECT_THROW(vocab_config_from(parse("[vocab]\ntie_break = \"random\"\n")), ConfigError);
  EXPECT_THROW(model_config_from(parse("[model]\npooling = \"median\"\n")), ConfigError);
  EXPECT_THROW(train_config_from(parse("[kd]\nlr = 0\n"), "kd", LossMode::KD), ConfigError);
  EXPECT_THROW(train_config_from(parse("[kd]\nmomentum = 0.9\n"), "kd", LossMode::KD), ConfigError);
}

TEST(SectionReaders, TrainKeepsStageDefaults) {
  const auto kd = train_config_from(parse("[kd]\nbatch_size = 128\n"), "kd", LossMode::KD);
  EXPECT_EQ(kd.batch_size, 128u);
  EXPECT_DOUBLE_EQ(kd.adam.lr, 5e-4);
  EXPECT_DOUBLE_EQ(kd.adam.beta2, 0.999);
  const auto ft = train_config_from(parse(""), "ft", LossMode::FT);
  EXPECT_DOUBLE_EQ(ft.adam.lr, 1e-4);
  EXPECT_EQ(ft.batch_size, 32u);
}

TEST(DefaultThreads, ReadsEnvironment) {
  ::setenv("SPARSEDAN_THREADS", "3", 1);
  EXPECT_EQ(default_threads(), 3u);
  ::setenv("SPARSEDAN_THREADS", "zero", 1);
  EXPECT_THROW(default_threads(), ConfigError);
  ::unsetenv("SPARSEDAN_THREADS");
  EXPECT_EQ(default_threads(), 1u);
}
