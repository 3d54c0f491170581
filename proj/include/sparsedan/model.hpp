// SPDX-License-Identifier: Apache-2.0
//
// Deep Averaging Network over n-gram embeddings.
//
//   h      = pool(Emb[g_1], ..., Emb[g_k])                (d_e)
//   f      = h                      single-sentence mode
//          = [h1, h2, h1*h2, |h1-h2|]  pair mode          (4 d_e)
//   z      = W_L ReLU(... ReLU(W_1 f + b_1) ...) + b_L
//   probs  = softmax(z)
//
// Attentive pooling scores every embedding e_i against the mean-pooled
// query q:  u_i = v . tanh(W_g e_i + W_h q),  a = softmax(u),  h = sum a_i e_i.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sparsedan/featurize.hpp"
#include "sparsedan/vocab.hpp"

namespace sparsedan {

enum class Pooling : std::uint8_t { Mean = 0, Max = 1, Sum = 2, Attentive = 3 };

std::string_view to_string(Pooling pooling) noexcept;
Pooling parse_pooling(std::string_view text);

struct DanConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 1000;
  /// Widths of the ReLU hidden layers; {1000} gives the 1000->1000->n head.
  std::vector<std::size_t> hidden{1000};
  std::size_t n_classes = 2;
  Pooling pooling = Pooling::Mean;
  bool pair_mode = false;
  /// Attention size d_a; only used with Pooling::Attentive.
  std::size_t attention_dim = 64;

  /// Throws ConfigError on degenerate dimensions.
  void validate() const;
  std::size_t head_input_dim() const noexcept { return pair_mode ? 4 * embed_dim : embed_dim; }
  bool operator==(const DanConfig&) const = default;
};

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t sparse = 0;
  std::uint64_t dense = 0;
};

/// sparse = |V| * d_e; dense = every head (and attention) parameter.
ParamCount param_count(const DanConfig& config);

template <typename T>
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> weight;  // out x in, row-major
  std::vector<T> bias;    // out
};

template <typename T>
struct AttentionParams {
  std::vector<T> key_proj;    // W_g: d_a x d_e, row-major
  std::vector<T> query_proj;  // W_h: d_a x d_e, row-major
  std::vector<T> score;       // v: d_a
};

template <typename T>
struct DanWeights {
  std::vector<T> embedding;  // |V| x d_e, row-major
  std::vector<DenseLayer<T>> layers;
  std::optional<AttentionParams<T>> attention;

  /// Every dense tensor in a fixed order: W_1, b_1, ..., W_L, b_L, then
  /// W_g, W_h, v when attentive. Gradients and optimizer moments mirror it.
  std::vector<std::span<T>> dense_tensors();
  std::vector<std::span<const T>> dense_tensors() const;
};

template <typename T>
struct SideTrace {
  std::vector<T> pooled;
  /// Attentive only: mean-pooled query, per-id weights and tanh activations (k x d_a).
  std::vector<T> query;
  std::vector<T> attention;
  std::vector<T> attention_hidden;
  /// Max only: per dimension, position in ids of the winning row.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
struct ForwardTrace {
  std::vector<SideTrace<T>> sides;  // one per sentence
  std::vector<T> features;          // head input
  std::vector<std::vector<T>> pre;  // pre-activation of each layer
  std::vector<std::vector<T>> post; // ReLU output of each hidden layer
  std::vector<T> logits;
  std::vector<T> probs;
};

/// Numerically stable softmax (max subtraction).
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
class BasicDanModel {
 public:
  /// Random initialization: embeddings U(-0.1/sqrt(d_e), 0.1/sqrt(d_e)),
  /// dense tensors U(-1/sqrt(fan_in), 1/sqrt(fan_in)). config.vocab_size is
  /// taken from the vocabulary.
  BasicDanModel(std::shared_ptr<const NgramVocab> vocab, DanConfig config, std::uint64_t seed);
  /// Explicit weights; throws StructuralError on any shape mismatch.
  BasicDanModel(std::shared_ptr<const NgramVocab> vocab, DanConfig config, DanWeights<T> weights);

  const DanConfig& config() const noexcept { return config_; }
  const NgramVocab& vocab() const noexcept { return *vocab_; }
  const std::shared_ptr<const NgramVocab>& vocab_ptr() const noexcept { return vocab_; }
  DanWeights<T>& weights() noexcept { return weights_; }
  const DanWeights<T>& weights() const noexcept { return weights_; }

  std::span<T> embedding_row(std::uint32_t id);
  std::span<const T> embedding_row(std::uint32_t id) const;

  /// Pooled sentence vector; the zero vector for an empty id list.
  std::vector<T> pool(std::span<const std::uint32_t> ids) const;

  /// Throws StructuralError when an id is out of range or the example kind
  /// does not match pair_mode.
  ForwardTrace<T> forward(const Example& example) const;
  std::vector<T> predict(const Example& example) const { return forward(example).probs; }

  /// Batched inference: probabilities for every example, row-major
  /// (batch x n_classes).
  std::vector<T> predict_batch(std::span<const Example> batch) const;

  ParamCount param_count() const { return sparsedan::param_count(config_); }

  template <typename U>
  BasicDanModel<U> cast() const;

 private:
  void pool_into(std::span<const std::uint32_t> ids, SideTrace<T>* trace, std::span<T> out) const;
  void features_into(const Example& example, std::vector<SideTrace<T>>* sides,
                     std::span<T> out) const;
  void check_ids(std::span<const std::uint32_t> ids) const;

  DanConfig config_;
  std::shared_ptr<const NgramVocab> vocab_;
  DanWeights<T> weights_;
};

using DanModel = BasicDanModel<double>;
using DanModel32 = BasicDanModel<float>;

/// Self-contained model file: config block, embedded vocabulary and
/// row-major f64 weight blobs.
void save_model(const DanModel& model, const std::filesystem::path& path);
DanModel load_model(const std::filesystem::path& path);

/// Index of the largest probability (first on ties).
template <typename T>
int argmax(std::span<const T> values);

}  // namespace sparsedan
