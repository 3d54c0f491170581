// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/vocab.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <fstream>
#include <queue>
#include <thread>

#include "sparsedan/errors.hpp"
#include "sparsedan/tokenize.hpp"

namespace sparsedan {
namespace {

constexpr io::Magic kVocabMagic = {'S', 'D', 'V', 'O', 'C', 'A', 'B', '\0'};
constexpr std::uint32_t kVocabVersion = 1;

struct Candidate {
  std::uint64_t frequency;
  std::string ngram;
};

// Bounded selection of the k best-ranked candidates. The heap top is the
// worst retained candidate.
class TopK {
 public:
  TopK(std::size_t k, TieBreak tie)
      : k_(k), heap_([tie](const Candidate& a, const Candidate& b) {
          return ranks_before(a.frequency, a.ngram, b.frequency, b.ngram, tie);
        }),
        tie_(tie) {}

  void offer(std::uint64_t frequency, std::string_view ngram) {
    if (heap_.size() == k_) {
      const Candidate& worst = heap_.top();
      if (!ranks_before(frequency, ngram, worst.frequency, worst.ngram, tie_)) return;
      heap_.pop();
    }
    heap_.push(Candidate{frequency, std::string(ngram)});
  }

  std::vector<VocabEntry> take_sorted() {
    std::vector<VocabEntry> out;
    out.reserve(heap_.size());
    while (!heap_.empty()) {
      // top() is const; the candidate is popped right after.
      auto& top = const_cast<Candidate&>(heap_.top());
      out.push_back(VocabEntry{std::move(top.ngram), top.frequency});
      heap_.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  using Compare = std::function<bool(const Candidate&, const Candidate&)>;
  std::size_t k_;
  std::priority_queue<Candidate, std::vector<Candidate>, Compare> heap_;
  TieBreak tie_;
};

// Sequential reader over one spilled run: (u32 len, bytes, u64 count)*.
class RunReader {
 public:
  explicit RunReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot reopen spill run " + path.string());
    advance();
  }
  bool done() const noexcept { return done_; }
  const std::string& key() const noexcept { return key_; }
  std::uint64_t count() const noexcept { return count_; }

  void advance() {
    std::uint32_t len;
    if (!in_.read(reinterpret_cast<char*>(&len), sizeof(len))) {
      done_ = true;
      return;
    }
    key_.resize(len);
    in_.read(key_.data(), len);
    in_.read(reinterpret_cast<char*>(&count_), sizeof(count_));
    if (!in_) throw IoError("corrupt spill run");
  }

 private:
  std::ifstream in_;
  std::string key_;
  std::uint64_t count_ = 0;
  bool done_ = false;
};

std::filesystem::path next_run_path(const std::filesystem::path& dir) {
  static std::atomic<std::uint64_t> counter{0};
  return dir / ("sparsedan-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)) + ".run");
}

template <typename Visit>
void for_each_ngram(const TokenizedText& tokens, NgramRange range, Visit&& visit) {
  for (std::size_t n = range.min; n <= range.max && n <= tokens.size(); ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) visit(tokens.ngram(i, n));
  }
}

}  // namespace

void NgramRange::validate() const {
  if (min < 1 || min > max) {
    throw ConfigError("invalid n-gram range (" + std::to_string(min) + ", " +
                      std::to_string(max) + "): need 1 <= nmin <= nmax");
  }
  if (max > 255) throw ConfigError("n-gram order above 255 not supported");
}

bool ranks_before(std::uint64_t freq_a, std::string_view a, std::uint64_t freq_b,
                  std::string_view b, TieBreak tie) noexcept {
  if (freq_a != freq_b) return freq_a > freq_b;
  return tie == TieBreak::LexicographicAscending ? a < b : a > b;
}

NgramVocab::NgramVocab(std::vector<VocabEntry> entries, NgramRange range,
                       VocabSource source, TieBreak tie)
    : entries_(std::move(entries)), range_(range), source_(source), tie_(tie) {
  range_.validate();
  if (entries_.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("vocabulary too large for 32-bit ids");
  }
  orders_.reserve(entries_.size());
  index_.reserve(entries_.size());
  for (std::uint32_t id = 0; id < entries_.size(); ++id) {
    const auto& ngram = entries_[id].ngram;
    const std::size_t n = ngram_order(ngram);
    if (!range_.contains(n)) {
      throw ConfigError("n-gram '" + ngram + "' has order " + std::to_string(n) +
                        " outside the vocabulary range");
    }
    if (!index_.emplace(ngram, id).second) {
      throw ConfigError("duplicate n-gram '" + ngram + "' in vocabulary");
    }
    orders_.push_back(static_cast<std::uint8_t>(n));
  }
}

std::size_t NgramVocab::count_up_to_order(std::size_t n) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(orders_.begin(), orders_.end(), [n](std::uint8_t o) { return o <= n; }));
}

bool NgramVocab::operator==(const NgramVocab& other) const {
  return entries_ == other.entries_ && range_ == other.range_ && source_ == other.source_ &&
         tie_ == other.tie_;
}

void VocabConfig::validate() const {
  range.validate();
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

NgramCounter::NgramCounter(const VocabConfig& config) : config_(config) {
  config_.validate();
}

NgramCounter::~NgramCounter() {
  std::error_code ec;
  for (const auto& run : runs_) std::filesystem::remove(run, ec);
}

NgramCounter::NgramCounter(NgramCounter&&) noexcept = default;
NgramCounter& NgramCounter::operator=(NgramCounter&&) noexcept = default;

void NgramCounter::add(std::string_view document) {
  const TokenizedText tokens = tokenize(document);
  ++documents_;
  tokens_ += tokens.size();
  for_each_ngram(tokens, config_.range, [&](std::string_view key) {
    if (auto it = counts_.find(key); it != counts_.end()) {
      ++it->second;
    } else {
      counts_.emplace(std::string(key), 1);
    }
  });
  if (config_.max_in_memory > 0 && counts_.size() >= config_.max_in_memory) spill();
}

void NgramCounter::merge(NgramCounter&& other) {
  if (other.config_.range != config_.range) {
    throw ConfigError("cannot merge counters with different n-gram ranges");
  }
  documents_ += other.documents_;
  tokens_ += other.tokens_;
  for (auto& [key, count] : other.counts_) {
    if (auto it = counts_.find(key); it != counts_.end()) {
      it->second += count;
    } else {
      counts_.emplace(key, count);
    }
  }
  other.counts_.clear();
  runs_.insert(runs_.end(), other.runs_.begin(), other.runs_.end());
  other.runs_.clear();
  if (config_.max_in_memory > 0 && counts_.size() >= config_.max_in_memory) spill();
}

void NgramCounter::spill() {
  if (counts_.empty()) return;
  std::vector<const std::pair<const std::string, std::uint64_t>*> sorted;
  sorted.reserve(counts_.size());
  for (const auto& kv : counts_) sorted.push_back(&kv);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->first < b->first; });

  auto path = next_run_path(config_.spill_dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create spill run " + path.string());
  for (const auto* kv : sorted) {
    const auto len = static_cast<std::uint32_t>(kv->first.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(kv->first.data(), len);
    out.write(reinterpret_cast<const char*>(&kv->second), sizeof(kv->second));
  }
  if (!out) throw IoError("write failed for spill run " + path.string());
  runs_.push_back(std::move(path));
  counts_.clear();
}

NgramCounter::Result NgramCounter::finish() {
  if (documents_ == 0) throw EmptyCorpusError();

  Result result;
  result.stats.document_count = documents_;
  result.stats.token_count = tokens_;
  TopK top(config_.top_k, config_.tie_break);
  auto emit = [&](std::string_view key, std::uint64_t count) {
    ++result.stats.distinct_ngrams_per_order[static_cast<std::uint32_t>(ngram_order(key))];
    top.offer(count, key);
  };

  if (runs_.empty()) {
    for (const auto& [key, count] : counts_) emit(key, count);
    counts_.clear();
  } else {
    spill();
    std::vector<RunReader> readers;
    readers.reserve(runs_.size());
    for (const auto& run : runs_) readers.emplace_back(run);
    auto later = [&](std::size_t a, std::size_t b) {
      return readers[a].key() > readers[b].key();
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(later)> frontier(later);
    for (std::size_t r = 0; r < readers.size(); ++r) {
      if (!readers[r].done()) frontier.push(r);
    }
    std::string key;
    while (!frontier.empty()) {
      std::size_t r = frontier.top();
      frontier.pop();
      key = readers[r].key();
      std::uint64_t count = readers[r].count();
      readers[r].advance();
      if (!readers[r].done()) frontier.push(r);
      while (!frontier.empty() && readers[frontier.top()].key() == key) {
        r = frontier.top();
        frontier.pop();
        count += readers[r].count();
        readers[r].advance();
        if (!readers[r].done()) frontier.push(r);
      }
      emit(key, count);
    }
    readers.clear();
    std::error_code ec;
    for (const auto& run : runs_) std::filesystem::remove(run, ec);
    runs_.clear();
  }

  result.vocab = NgramVocab(top.take_sorted(), config_.range, config_.source, config_.tie_break);
  documents_ = 0;
  tokens_ = 0;
  return result;
}

NgramVocab build_vocab(std::span<const std::string> documents, const VocabConfig& config) {
  config.validate();
  const std::size_t workers =
      config.max_in_memory > 0 ? 1 : std::min(config.workers, std::max<std::size_t>(1, documents.size()));
  if (workers <= 1) {
    NgramCounter counter(config);
    for (const auto& doc : documents) counter.add(doc);
    return counter.finish().vocab;
  }

  // Contiguous shards, merged in shard order. Integer counts make the
  // merged result independent of the sharding.
  std::vector<NgramCounter> shards;
  shards.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) shards.emplace_back(config);
  std::vector<std::thread> threads;
  const std::size_t per = (documents.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      const std::size_t begin = std::min(documents.size(), w * per);
      const std::size_t end = std::min(documents.size(), begin + per);
      for (std::size_t i = begin; i < end; ++i) shards[w].add(documents[i]);
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t w = 1; w < workers; ++w) shards[0].merge(std::move(shards[w]));
  return shards[0].finish().vocab;
}

NgramVocab build_vocab(const DocumentSource& documents, const VocabConfig& config) {
  NgramCounter counter(config);
  std::string doc;
  while (documents(doc)) counter.add(doc);
  return counter.finish().vocab;
}

namespace {

void count_into(std::string_view document, const NgramVocab& vocab,
                std::vector<std::uint64_t>& counts) {
  const TokenizedText tokens = tokenize(document);
  for_each_ngram(tokens, vocab.range(), [&](std::string_view key) {
    if (auto id = vocab.find(key)) ++counts[*id];
  });
}

}  // namespace

std::vector<std::uint64_t> ngram_frequencies(std::span<const std::string> documents,
                                             const NgramVocab& vocab) {
  std::vector<std::uint64_t> counts(vocab.size(), 0);
  for (const auto& doc : documents) count_into(doc, vocab, counts);
  return counts;
}

std::vector<std::uint64_t> ngram_frequencies(const DocumentSource& documents,
                                             const NgramVocab& vocab) {
  std::vector<std::uint64_t> counts(vocab.size(), 0);
  std::string doc;
  while (documents(doc)) count_into(doc, vocab, counts);
  return counts;
}

void write_vocab_body(io::BinaryWriter& out, const NgramVocab& vocab) {
  out.put(vocab.range().min);
  out.put(vocab.range().max);
  out.put(static_cast<std::uint8_t>(vocab.source()));
  out.put(static_cast<std::uint8_t>(vocab.tie_break()));
  out.put(static_cast<std::uint64_t>(vocab.size()));
  for (const auto& e : vocab.entries()) {
    out.put_string(e.ngram);
    out.put(e.frequency);
  }
}

NgramVocab read_vocab_body(io::BinaryReader& in) {
  NgramRange range;
  range.min = in.get<std::uint32_t>();
  range.max = in.get<std::uint32_t>();
  const auto source = in.get<std::uint8_t>();
  const auto tie = in.get<std::uint8_t>();
  if (source > 1 || tie > 1) in.fail("invalid vocab source/tie-break tag");
  if (range.min < 1 || range.min > range.max || range.max > 255) in.fail("invalid n-gram range");
  const auto count = in.get<std::uint64_t>();
  // Each entry needs at least 12 bytes; reject absurd counts before allocating.
  if (count > in.remaining() / 12) in.fail("entry count exceeds file size");
  std::vector<VocabEntry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    VocabEntry e;
    e.ngram = in.get_string();
    e.frequency = in.get<std::uint64_t>();
    entries.push_back(std::move(e));
  }
  try {
    return NgramVocab(std::move(entries), range, static_cast<VocabSource>(source),
                      static_cast<TieBreak>(tie));
  } catch (const ConfigError& e) {
    in.fail(std::string("inconsistent vocabulary: ") + e.what());
  }
}

void save_vocab(const NgramVocab& vocab, const std::filesystem::path& path) {
  io::BinaryWriter out(kVocabMagic, kVocabVersion);
  write_vocab_body(out, vocab);
  out.commit(path);
}

NgramVocab load_vocab(const std::filesystem::path& path) {
  io::BinaryReader in(path, kVocabMagic, kVocabVersion);
  NgramVocab vocab = read_vocab_body(in);
  in.expect_end();
  return vocab;
}

std::string_view to_string(VocabSource source) noexcept {
  return source == VocabSource::TrainOnly ? "train" : "corpus+train";
}

std::string_view to_string(TieBreak tie) noexcept {
  return tie == TieBreak::LexicographicAscending ? "lex-asc" : "lex-desc";
}

TieBreak parse_tie_break(std::string_view text) {
  if (text == "lex-asc") return TieBreak::LexicographicAscending;
  if (text == "lex-desc") return TieBreak::LexicographicDescending;
  throw ConfigError("unknown tie-break '" + std::string(text) + "' (lex-asc or lex-desc)");
}

VocabSource parse_vocab_source(std::string_view text) {
  if (text == "train") return VocabSource::TrainOnly;
  if (text == "corpus+train" || text == "corpus") return VocabSource::CorpusAndTrain;
  throw ConfigError("unknown frequency source '" + std::string(text) +
                    "' (expected train or corpus+train)");
}

}  // namespace sparsedan
