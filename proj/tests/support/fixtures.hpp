// SPDX-License-Identifier: Apache-2.0
// Shared test helpers: temp dirs, a brute-force vocabulary oracle and the
// synthetic tasks used by unit and acceptance tests.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sparsedan/dataset.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/vocab.hpp"

namespace sparsedan::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::string read_file(const std::filesystem::path& path);

/// Soft-label JSONL in the teacher export format ({"text", "probs"}).
void write_soft_labels(const std::filesystem::path& path, const std::vector<std::string>& texts,
                       const std::vector<std::vector<double>>& probs);

/// Every n-gram counted into a std::map, then fully sorted. Independent of
/// the library's counter; only the tokenizer rule (ASCII lowercase, split on
/// spaces) is shared, and the test corpora contain ASCII only.
std::map<std::string, std::uint64_t> brute_force_counts(const std::vector<std::string>& docs,
                                                        std::size_t nmin, std::size_t nmax);
std::vector<VocabEntry> brute_force_topk(const std::vector<std::string>& docs, std::size_t nmin,
                                         std::size_t nmax, std::size_t k, bool descending_ties);

/// Vocabulary whose ids follow `ngrams`, with strictly decreasing frequencies.
std::shared_ptr<const NgramVocab> make_vocab(const std::vector<std::string>& ngrams,
                                             NgramRange range = {1, 4});

/// Random corpus over an alphabet of `alphabet` words w0..w{alphabet-1}.
std::vector<std::string> random_corpus(std::mt19937_64& rng, std::size_t docs,
                                       std::size_t max_len, std::size_t alphabet);

// ---------------------------------------------------------------------------
// Synthetic tasks. Each draw returns text plus gold label and, where it
// exists, the generating rule's class distribution (the oracle teacher).

struct Sample {
  std::string text;
  int label = 0;
  std::vector<double> teacher;
};

/// Label = more positive than negative cue words. Many cue words, each rare
/// per document, so a few hundred labels cover them poorly.
struct CueWordTask {
  std::size_t cues_per_class = 300;
  std::size_t filler_words = 200;
  std::size_t doc_tokens = 12;
  std::size_t cues_per_doc = 3;  // odd, so there are no ties
  double teacher_sharpness = 1.5;

  Sample draw(std::mt19937_64& rng) const;
};

/// Label carried by a few frequent cue words; every document also draws
/// Zipf-distributed noise from a long tail of rare words.
struct FrequentCueTask {
  std::size_t cues_per_class = 10;
  std::size_t noise_words = 20000;
  std::size_t doc_tokens = 10;
  double zipf_exponent = 1.1;

  Sample draw(std::mt19937_64& rng) const;

 private:
  mutable std::vector<double> cdf_;
};

/// Label decided by word order: class 1 contains "a<k> b<k>", class 0
/// contains "b<k> a<k>". The unigram bag has the same distribution for both.
struct WordOrderTask {
  std::size_t markers = 20;
  std::size_t filler_words = 50;
  std::size_t filler_tokens = 6;

  Sample draw(std::mt19937_64& rng) const;
};

template <typename Task>
std::vector<Sample> draw_samples(const Task& task, std::mt19937_64& rng, std::size_t n) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(task.draw(rng));
  return out;
}

std::vector<Record> labeled_records(const std::vector<Sample>& samples);
std::vector<Record> soft_records(const std::vector<Sample>& samples);
std::vector<std::string> texts(const std::vector<Sample>& samples);

/// Largest relative disagreement between backward() and central finite
/// differences of batch_loss() over every dense weight and every embedding
/// entry; rows absent from the sparse gradient count as zero. Relative error
/// is |a - n| / max(|a|, |n|, floor). Steps much below 1e-5 let roundoff
/// dominate on entries near 1e-7.
double max_gradient_error(const DanModel& model, std::span<const Example> batch, LossMode mode,
                          double step = 1e-5, double floor = 1e-6);

/// Textbook dense Adam on one flat parameter vector.
struct DenseAdam {
  AdamHyper hyper;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  explicit DenseAdam(std::size_t n, AdamHyper h = {}) : hyper(h), m(n, 0.0), v(n, 0.0) {}
  void step(std::span<double> w, std::span<const double> g);
};

/// Small model with every tensor filled from U(-scale, scale).
DanModel random_model(std::shared_ptr<const NgramVocab> vocab, DanConfig config,
                      std::uint64_t seed, double scale = 0.5);

}  // namespace sparsedan::testing
