// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/prune.hpp"

using namespace sparsedan;
using namespace sparsedan::testing;

namespace {

DanConfig small(std::size_t embed = 4) {
  DanConfig c;
  c.embed_dim = embed;
  c.hidden = {3};
  return c;
}

PruneSpec keep_count(std::size_t n, std::vector<std::uint64_t> freq) {
  PruneSpec s;
  s.keep_count = n;
  s.frequencies = std::move(freq);
  return s;
}

PruneSpec keep_fraction(double f, std::vector<std::uint64_t> freq) {
  PruneSpec s;
  s.keep_fraction = f;
  s.frequencies = std::move(freq);
  return s;
}

std::set<std::string> kept_ngrams(const DanModel& m) {
  std::set<std::string> out;
  for (const auto& e : m.vocab().entries()) out.insert(e.ngram);
  return out;
}

}  // namespace

TEST(Prune, HandSelection) {
  auto vocab = make_vocab({"c", "a", "b"});
  const DanModel m = random_model(vocab, small(), 1);
  const DanModel p = prune_model(m, keep_count(2, {1, 10, 5}));
  ASSERT_EQ(p.vocab().size(), 2u);
  EXPECT_EQ(p.vocab().entry(0), (VocabEntry{"a", 10}));
  EXPECT_EQ(p.vocab().entry(1), (VocabEntry{"b", 5}));
  EXPECT_TRUE(std::equal(p.embedding_row(0).begin(), p.embedding_row(0).end(), m.embedding_row(1).begin()));
  EXPECT_TRUE(std::equal(p.embedding_row(1).begin(), p.embedding_row(1).end(), m.embedding_row(2).begin()));
  EXPECT_EQ(p.param_count().sparse, 2u * 4);
  EXPECT_EQ(p.weights().layers[0].weight, m.weights().layers[0].weight);
}

TEST(Prune, IdentityPreservesOutputs) {
  std::mt19937_64 rng(2);
  const auto docs = random_corpus(rng, 100, 12, 20);
  VocabConfig vc;
  vc.range = {1, 2};
  vc.top_k = 80;
  auto vocab = std::make_shared<const NgramVocab>(build_vocab(docs, vc));
  for (Pooling pooling : {Pooling::Mean, Pooling::Attentive}) {
    DanConfig c = small();
    c.pooling = pooling;
    const DanModel m = random_model(vocab, c, 3);
    const DanModel p = prune_model(m, keep_fraction(1.0, ngram_frequencies(docs, *vocab)));
    for (const auto& d : docs) {
      const auto a = m.predict(featurize(d, m.vocab()));
      const auto b = p.predict(featurize(d, p.vocab()));
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
    }
  }
}

TEST(Prune, SurvivingInputsKeepTheirPooledVector) {
  auto vocab = make_vocab({"a", "b", "c", "d", "e"});
  const DanModel m = random_model(vocab, small(), 4);
  const DanModel p = prune_model(m, keep_count(3, {9, 1, 7, 8, 2}));
  EXPECT_EQ(kept_ngrams(p), (std::set<std::string>{"a", "c", "d"}));
  const auto h0 = m.pool(featurize("a c d a", m.vocab()).ids);
  const auto h1 = p.pool(featurize("a c d a", p.vocab()).ids);
  for (std::size_t k = 0; k < h0.size(); ++k) EXPECT_NEAR(h0[k], h1[k], 1e-12);
}

TEST(Prune, FractionRoundsUp) {
  auto vocab = make_vocab({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"});
  const DanModel m = random_model(vocab, small(), 5);
  const std::vector<std::uint64_t> f(10, 3);
  EXPECT_EQ(prune_model(m, keep_fraction(0.3, f)).vocab().size(), 3u);
  EXPECT_EQ(prune_model(m, keep_fraction(0.31, f)).vocab().size(), 4u);
  EXPECT_EQ(prune_model(m, keep_fraction(0.01, f)).vocab().size(), 1u);
}

TEST(Prune, TiesFollowVocabTieBreak) {
  auto vocab = make_vocab({"b", "a", "c"});
  const DanModel m = random_model(vocab, small(), 6);
  EXPECT_EQ(kept_ngrams(prune_model(m, keep_count(2, {4, 4, 4}))), (std::set<std::string>{"a", "b"}));
}

TEST(Prune, Errors) {
  auto vocab = make_vocab({"a", "b"});
  const DanModel m = random_model(vocab, small(), 7);
  EXPECT_THROW(prune_model(m, keep_count(3, {1, 1})), ConfigError);
  EXPECT_THROW(prune_model(m, keep_count(0, {1, 1})), ConfigError);
  EXPECT_THROW(prune_model(m, keep_fraction(0.0, {1, 1})), ConfigError);
  EXPECT_THROW(prune_model(m, keep_fraction(1.5, {1, 1})), ConfigError);
  EXPECT_THROW(prune_model(m, keep_count(1, {1})), StructuralError);
  PruneSpec both = keep_count(1, {1, 1});
  both.keep_fraction = 0.5;
  EXPECT_THROW(prune_model(m, both), ConfigError);
}

TEST(Prune, NestingProperty) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::uint64_t> freq(0, 6);  // many ties
  std::vector<std::string> ngrams;
  for (int i = 0; i < 200; ++i) ngrams.push_back("w" + std::to_string(i));
  auto vocab = make_vocab(ngrams);
  const DanModel m = random_model(vocab, small(2), 9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> f(200);
    for (auto& x : f) x = freq(rng);
    std::set<std::string> prev;
    for (double fraction : {0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0}) {
      const auto kept = kept_ngrams(prune_model(m, keep_fraction(fraction, f)));
      EXPECT_TRUE(std::includes(kept.begin(), kept.end(), prev.begin(), prev.end()));
      prev = kept;
    }
  }
}

TEST(Prune, FileShrinksProportionally) {
  std::vector<std::string> ngrams;
  for (int i = 0; i < 2000; ++i) ngrams.push_back("w" + std::to_string(i));
  auto vocab = make_vocab(ngrams);
  const DanModel m(vocab, small(32), 10);
  std::vector<std::uint64_t> f(2000);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 2000 - i;
  const DanModel p = prune_model(m, keep_fraction(0.1, f));
  TempDir dir;
  save_model(m, dir / "m.bin");
  save_model(p, dir / "p.bin");
  const double ratio = static_cast<double>(std::filesystem::file_size(dir / "p.bin")) /
                       static_cast<double>(std::filesystem::file_size(dir / "m.bin"));
  EXPECT_LT(ratio, 0.15);
  EXPECT_EQ(load_model(dir / "p.bin").vocab().size(), 200u);
}

TEST(PruneSweep, IdentityPointAndParamsColumn) {
  CueWordTask task;
  std::mt19937_64 rng(11);
  const auto train_s = draw_samples(task, rng, 600), dev_s = draw_samples(task, rng, 200);
  VocabConfig vc;
  vc.range = {1, 2};
  auto vocab = std::make_shared<const NgramVocab>(build_vocab(texts(train_s), vc));
  DanModel m(vocab, small(8), 12);
  TrainConfig c = TrainConfig::defaults(LossMode::FT);
  c.adam.lr = 0.02;
  c.epochs = 3;
  train(m, to_examples(labeled_records(train_s), *vocab), {}, c);
  const auto freq = ngram_frequencies(texts(train_s), *vocab);
  const auto dev = labeled_records(dev_s);
  const std::vector<double> fractions{1.0, 0.5, 0.1};
  const auto rows = prune_sweep(m, freq, VocabSource::TrainOnly, fractions, dev);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_DOUBLE_EQ(rows[0].accuracy, evaluate(m, to_examples(dev, *vocab)).accuracy);
  for (const auto& r : rows) {
    EXPECT_EQ(r.params.sparse, r.keep_count * 8);
    EXPECT_EQ(r.params.dense, m.param_count().dense);
    EXPECT_LE(r.params.total, rows[0].params.total);
  }
  TempDir dir;
  write_prune_sweep_csv(rows, dir / "s.csv");
  EXPECT_EQ(read_file(dir / "s.csv").find("fraction,keep_count,params_total"), 0u);
}

TEST(CutoffEval, EffectiveVocabAndNoOpCutoff) {
  auto vocab = make_vocab({"a", "b", "a b"}, {1, 2});
  const DanModel m = random_model(vocab, small(), 13);
  std::vector<Record> dev(2);
  dev[0].text = "a b";
  dev[0].label = 0;
  dev[1].text = "b a b";
  dev[1].label = 1;
  const std::vector<std::size_t> cutoffs{1, 2};
  const auto rows = cutoff_eval(m, dev, cutoffs);
  EXPECT_EQ(rows[0].effective_vocab, 2u);
  EXPECT_EQ(rows[1].effective_vocab, 3u);
  EXPECT_DOUBLE_EQ(rows[1].accuracy, evaluate(m, to_examples(dev, *vocab)).accuracy);
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(cutoff_eval(m, dev, bad), ConfigError);
}
