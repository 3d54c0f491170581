// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <numeric>

#include "sparsedan/binary_io.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/optim.hpp"

namespace sparsedan {

std::size_t PruneSpec::resolve_keep(std::size_t vocab_size) const {
  if (keep_count) return *keep_count;
  const double exact = *keep_fraction * static_cast<double>(vocab_size);
  // Absorb representation error so that e.g. 0.3 * 10 keeps 3, not 4.
  const double rounded = std::round(exact);
  const double keep = std::abs(exact - rounded) <= 1e-9 * std::max(1.0, exact) ? rounded
                                                                               : std::ceil(exact);
  return static_cast<std::size_t>(keep);
}

void PruneSpec::validate(std::size_t vocab_size) const {
  if (keep_fraction.has_value() == keep_count.has_value()) {
    throw ConfigError("set exactly one of keep_fraction and keep_count");
  }
  if (keep_fraction && !(*keep_fraction > 0.0 && *keep_fraction <= 1.0)) {
    throw ConfigError("keep_fraction must lie in (0, 1]");
  }
  if (keep_count && *keep_count == 0) throw ConfigError("keep_count must be positive");
  if (keep_count && *keep_count > vocab_size) {
    throw ConfigError("keep_count " + std::to_string(*keep_count) + " exceeds |V|=" +
                      std::to_string(vocab_size));
  }
  if (frequencies.size() != vocab_size) {
    throw StructuralError("frequencies cover " + std::to_string(frequencies.size()) +
                          " ids, vocabulary has " + std::to_string(vocab_size));
  }
}

std::vector<std::uint32_t> select_kept(const NgramVocab& vocab,
                                       std::span<const std::uint64_t> frequencies,
                                       std::size_t keep, TieBreak tie) {
  if (frequencies.size() != vocab.size()) {
    throw StructuralError("frequency table does not match vocabulary size");
  }
  std::vector<std::uint32_t> ids(vocab.size());
  std::iota(ids.begin(), ids.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return ranks_before(frequencies[a], vocab.entry(a).ngram, frequencies[b], vocab.entry(b).ngram,
                        tie);
  };
  keep = std::min(keep, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), better);
  ids.resize(keep);
  return ids;
}

DanModel prune_model(const DanModel& model, const PruneSpec& spec) {
  const NgramVocab& vocab = model.vocab();
  spec.validate(vocab.size());
  const std::size_t keep = std::max<std::size_t>(1, spec.resolve_keep(vocab.size()));
  const auto kept = select_kept(vocab, spec.frequencies, keep, vocab.tie_break());

  std::vector<VocabEntry> entries;
  entries.reserve(kept.size());
  for (auto id : kept) entries.push_back(VocabEntry{vocab.entry(id).ngram, spec.frequencies[id]});
  auto pruned_vocab = std::make_shared<const NgramVocab>(std::move(entries), vocab.range(),
                                                         spec.frequency_source, vocab.tie_break());

  DanConfig config = model.config();
  config.vocab_size = kept.size();
  DanWeights<double> weights = model.weights();
  const std::size_t d = config.embed_dim;
  weights.embedding.assign(kept.size() * d, 0.0);
  for (std::size_t new_id = 0; new_id < kept.size(); ++new_id) {
    auto row = model.embedding_row(kept[new_id]);
    std::copy(row.begin(), row.end(), weights.embedding.begin() + static_cast<std::ptrdiff_t>(new_id * d));
  }
  return DanModel(std::move(pruned_vocab), std::move(config), std::move(weights));
}

namespace {

double dev_accuracy(const DanModel& model, std::span<const Record> dev,
                    std::optional<std::size_t> cutoff = std::nullopt) {
  const auto examples = to_examples(dev, model.vocab(), cutoff);
  return evaluate(model, examples).accuracy;
}

}  // namespace

std::vector<PruneSweepRow> prune_sweep(const DanModel& model,
                                       std::span<const std::uint64_t> frequencies,
                                       VocabSource source, std::span<const double> fractions,
                                       std::span<const Record> dev) {
  if (dev.empty()) throw ConfigError("prune sweep needs a dev set");
  std::vector<PruneSweepRow> rows;
  for (double fraction : fractions) {
    PruneSpec spec;
    spec.keep_fraction = fraction;
    spec.frequency_source = source;
    spec.frequencies.assign(frequencies.begin(), frequencies.end());
    const DanModel pruned = prune_model(model, spec);
    rows.push_back(PruneSweepRow{fraction, pruned.config().vocab_size, pruned.param_count(),
                                 dev_accuracy(pruned, dev)});
  }
  return rows;
}

std::vector<CutoffRow> cutoff_eval(const DanModel& model, std::span<const Record> dev,
                                   std::span<const std::size_t> cutoffs) {
  std::vector<CutoffRow> rows;
  for (std::size_t cutoff : cutoffs) {
    if (!model.vocab().range().contains(cutoff)) {
      throw ConfigError("cutoff " + std::to_string(cutoff) + " outside the vocabulary range");
    }
    rows.push_back(CutoffRow{cutoff, model.vocab().count_up_to_order(cutoff),
                             dev_accuracy(model, dev, cutoff)});
  }
  return rows;
}

void write_prune_sweep_csv(std::span<const PruneSweepRow> rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "fraction,keep_count,params_total,params_sparse,params_dense,dev_accuracy\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.fraction << ',' << r.keep_count << ',' << r.params.total << ',' << r.params.sparse
        << ',' << r.params.dense << ',' << r.accuracy << '\n';
  }
  io::write_file_atomic(path, out.str());
}

void write_cutoff_csv(std::span<const CutoffRow> rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "n_cutoff,effective_vocab,dev_accuracy\n";
  out.precision(10);
  for (const auto& r : rows) out << r.cutoff << ',' << r.effective_vocab << ',' << r.accuracy << '\n';
  io::write_file_atomic(path, out.str());
}

}  // namespace sparsedan
