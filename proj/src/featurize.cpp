// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/featurize.hpp"

#include <algorithm>
#include <thread>

#include "sparsedan/errors.hpp"
#include "sparsedan/tokenize.hpp"

namespace sparsedan {

const std::optional<int>& label_of(const Example& ex) noexcept {
  return std::visit([](const auto& e) -> const std::optional<int>& { return e.label; }, ex);
}

const std::vector<double>& teacher_probs_of(const Example& ex) noexcept {
  return std::visit(
      [](const auto& e) -> const std::vector<double>& { return e.teacher_probs; }, ex);
}

std::size_t source_line_of(const Example& ex) noexcept {
  return std::visit([](const auto& e) { return e.source_line; }, ex);
}

FeaturizedExample featurize(std::string_view text, const NgramVocab& vocab,
                            std::optional<std::size_t> n_cutoff) {
  const NgramRange range = vocab.range();
  std::size_t max_order = range.max;
  if (n_cutoff) {
    if (!range.contains(*n_cutoff)) {
      throw ConfigError("n-gram cutoff " + std::to_string(*n_cutoff) +
                        " outside vocabulary range");
    }
    max_order = *n_cutoff;
  }

  FeaturizedExample ex;
  const TokenizedText tokens = tokenize(text);
  const std::size_t m = tokens.size();
  for (std::size_t n = range.min; n <= max_order && n <= m; ++n) {
    ex.total_ngrams += m - n + 1;
    for (std::size_t i = 0; i + n <= m; ++i) {
      if (auto id = vocab.find(tokens.ngram(i, n))) ex.ids.push_back(*id);
    }
  }
  ex.matched_ngrams = ex.ids.size();
  return ex;
}

PairExample featurize_pair(std::string_view left, std::string_view right,
                           const NgramVocab& vocab, std::optional<std::size_t> n_cutoff) {
  PairExample pair;
  pair.left = featurize(left, vocab, n_cutoff);
  pair.right = featurize(right, vocab, n_cutoff);
  return pair;
}

double coverage_ratio(const FeaturizedExample& ex) {
  if (ex.total_ngrams == 0) throw UndefinedCoverageError();
  return static_cast<double>(ex.matched_ngrams) / static_cast<double>(ex.total_ngrams);
}

double coverage_ratio(const PairExample& ex) {
  const std::size_t total = ex.left.total_ngrams + ex.right.total_ngrams;
  if (total == 0) throw UndefinedCoverageError();
  return static_cast<double>(ex.left.matched_ngrams + ex.right.matched_ngrams) /
         static_cast<double>(total);
}

std::vector<FeaturizedExample> featurize_stream(std::span<const std::string> texts,
                                                const NgramVocab& vocab, std::size_t workers,
                                                std::optional<std::size_t> n_cutoff) {
  std::vector<FeaturizedExample> out(texts.size());
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, texts.size()));
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = featurize(texts[i], vocab, n_cutoff);
  };
  if (workers == 1) {
    run(0, texts.size());
    return out;
  }
  const std::size_t per = (texts.size() + workers - 1) / workers;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(texts.size(), w * per);
    const std::size_t end = std::min(texts.size(), begin + per);
    threads.emplace_back([&, w, begin, end] {
      try {
        run(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace sparsedan
