// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sparsedan/errors.hpp"

namespace fs = std::filesystem;

namespace sparsedan::testing {

TempDir::TempDir() {
  static std::mt19937_64 rng(std::random_device{}());
  for (int attempt = 0; attempt < 100; ++attempt) {
    fs::path p = fs::temp_directory_path() / ("sparsedan-test-" + std::to_string(rng()));
    if (fs::create_directory(p)) {
      path_ = p;
      return;
    }
  }
  throw IoError("cannot create a temporary directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_soft_labels(const fs::path& path, const std::vector<std::string>& texts,
                       const std::vector<std::vector<double>>& probs) {
  std::vector<Record> records(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    records[i].text = texts[i];
    records[i].probs = probs[i];
  }
  write_jsonl(records, path);
}

std::map<std::string, std::uint64_t> brute_force_counts(const std::vector<std::string>& docs,
                                                        std::size_t nmin, std::size_t nmax) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& doc : docs) {
    std::string lower = doc;
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::istringstream in(lower);
    std::vector<std::string> tokens;
    for (std::string t; in >> t;) tokens.push_back(t);
    for (std::size_t n = nmin; n <= nmax; ++n) {
      for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < n; ++j) key += " " + tokens[i + j];
        ++counts[key];
      }
    }
  }
  return counts;
}

std::vector<VocabEntry> brute_force_topk(const std::vector<std::string>& docs, std::size_t nmin,
                                         std::size_t nmax, std::size_t k, bool descending_ties) {
  const auto counts = brute_force_counts(docs, nmin, nmax);
  std::vector<VocabEntry> all;
  for (const auto& [key, n] : counts) all.push_back({key, n});
  std::sort(all.begin(), all.end(), [&](const VocabEntry& a, const VocabEntry& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return descending_ties ? a.ngram > b.ngram : a.ngram < b.ngram;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::shared_ptr<const NgramVocab> make_vocab(const std::vector<std::string>& ngrams,
                                             NgramRange range) {
  std::vector<VocabEntry> entries;
  for (std::size_t i = 0; i < ngrams.size(); ++i) {
    entries.push_back({ngrams[i], static_cast<std::uint64_t>(ngrams.size() - i)});
  }
  return std::make_shared<const NgramVocab>(std::move(entries), range);
}

std::vector<std::string> random_corpus(std::mt19937_64& rng, std::size_t docs, std::size_t max_len,
                                       std::size_t alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> word(0, alphabet - 1);
  std::vector<std::string> out;
  for (std::size_t d = 0; d < docs; ++d) {
    std::string doc;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) doc += ' ';
      doc += "w" + std::to_string(word(rng));
    }
    out.push_back(std::move(doc));
  }
  return out;
}

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

Sample CueWordTask::draw(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> cue(0, cues_per_class - 1);
  std::uniform_int_distribution<std::size_t> filler(0, filler_words - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::string> tokens;
  int margin = 0;
  for (std::size_t i = 0; i < cues_per_doc; ++i) {
    const bool positive = coin(rng);
    margin += positive ? 1 : -1;
    tokens.push_back((positive ? "pos" : "neg") + std::to_string(cue(rng)));
  }
  while (tokens.size() < doc_tokens) tokens.push_back("f" + std::to_string(filler(rng)));
  std::shuffle(tokens.begin(), tokens.end(), rng);
  Sample s;
  s.text = join(tokens);
  s.label = margin > 0 ? 1 : 0;
  const double p1 = 1.0 / (1.0 + std::exp(-teacher_sharpness * margin));
  s.teacher = {1.0 - p1, p1};
  return s;
}

Sample FrequentCueTask::draw(std::mt19937_64& rng) const {
  if (cdf_.size() != noise_words) {
    cdf_.resize(noise_words);
    double total = 0.0;
    for (std::size_t r = 0; r < noise_words; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), zipf_exponent);
      cdf_[r] = total;
    }
    for (auto& c : cdf_) c /= total;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cue(0, cues_per_class - 1);
  std::bernoulli_distribution coin(0.5);
  Sample s;
  s.label = coin(rng) ? 1 : 0;
  std::vector<std::string> tokens;
  tokens.push_back((s.label ? "yes" : "no") + std::to_string(cue(rng)));
  while (tokens.size() < doc_tokens) {
    const auto r = static_cast<std::size_t>(std::lower_bound(cdf_.begin(), cdf_.end(), u(rng)) - cdf_.begin());
    tokens.push_back("z" + std::to_string(std::min(r, noise_words - 1)));
  }
  std::shuffle(tokens.begin(), tokens.end(), rng);
  s.text = join(tokens);
  s.teacher = s.label ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0};
  return s;
}

Sample WordOrderTask::draw(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> marker(0, markers - 1);
  std::uniform_int_distribution<std::size_t> filler(0, filler_words - 1);
  std::uniform_int_distribution<std::size_t> slot(0, filler_tokens);
  std::bernoulli_distribution coin(0.5);
  Sample s;
  s.label = coin(rng) ? 1 : 0;
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < filler_tokens; ++i) tokens.push_back("f" + std::to_string(filler(rng)));
  const std::string k = std::to_string(marker(rng));
  const std::string pair = s.label ? "a" + k + " b" + k : "b" + k + " a" + k;
  tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(slot(rng)), pair);
  s.text = join(tokens);
  s.teacher = s.label ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0};
  return s;
}

std::vector<Record> labeled_records(const std::vector<Sample>& samples) {
  std::vector<Record> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out[i].text = samples[i].text;
    out[i].label = samples[i].label;
    out[i].line = i + 1;
  }
  return out;
}

std::vector<Record> soft_records(const std::vector<Sample>& samples) {
  std::vector<Record> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out[i].text = samples[i].text;
    out[i].probs = samples[i].teacher;
    out[i].line = i + 1;
  }
  return out;
}

std::vector<std::string> texts(const std::vector<Sample>& samples) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.text);
  return out;
}

double max_gradient_error(const DanModel& model, std::span<const Example> batch, LossMode mode,
                          double step, double floor) {
  const Gradients g = backward(batch, model, mode);
  DanModel probe = model;
  double worst = 0.0;
  auto check = [&](double& w, double analytic) {
    const double saved = w;
    w = saved + step;
    const double up = batch_loss(batch, probe, mode);
    w = saved - step;
    const double down = batch_loss(batch, probe, mode);
    w = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  auto tensors = probe.weights().dense_tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (std::size_t i = 0; i < tensors[t].size(); ++i) check(tensors[t][i], g.dense[t][i]);
  }
  const std::size_t d = model.config().embed_dim;
  for (std::uint32_t row = 0; row < model.config().vocab_size; ++row) {
    const double* grad = g.embedding.find(row);
    auto weights = probe.embedding_row(row);
    for (std::size_t k = 0; k < d; ++k) check(weights[k], grad ? grad[k] : 0.0);
  }
  return worst;
}

void DenseAdam::step(std::span<double> w, std::span<const double> g) {
  ++t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    w[i] -= hyper.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hyper.eps);
  }
}

DanModel random_model(std::shared_ptr<const NgramVocab> vocab, DanConfig config, std::uint64_t seed,
                      double scale) {
  config.vocab_size = vocab->size();
  DanModel model(std::move(vocab), config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& w : model.weights().embedding) w = u(rng);
  for (auto tensor : model.weights().dense_tensors()) {
    for (auto& w : tensor) w = u(rng);
  }
  return model;
}

}  // namespace sparsedan::testing
