// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sparsedan/binary_io.hpp"
#include "sparsedan/errors.hpp"

namespace sparsedan {
namespace {

constexpr io::Magic kModelMagic = {'S', 'D', 'M', 'O', 'D', 'E', 'L', '\0'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void fill_uniform(std::vector<T>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

// y = W x + b for W stored out x in.
template <typename T>
void affine(const DenseLayer<T>& layer, std::span<const T> x, std::span<T> y) {
  for (std::size_t o = 0; o < layer.out; ++o) {
    const T* w = layer.weight.data() + o * layer.in;
    T acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

template <typename T, typename U>
std::vector<U> convert(const std::vector<T>& v) {
  return std::vector<U>(v.begin(), v.end());
}

}  // namespace

std::string_view to_string(Pooling pooling) noexcept {
  switch (pooling) {
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
    case Pooling::Sum: return "sum";
    case Pooling::Attentive: return "attentive";
  }
  return "?";
}

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::Mean;
  if (text == "max") return Pooling::Max;
  if (text == "sum") return Pooling::Sum;
  if (text == "attentive" || text == "attention") return Pooling::Attentive;
  throw ConfigError("unknown pooling '" + std::string(text) + "'");
}

void DanConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embedding dimension must be positive");
  if (n_classes < 2) throw ConfigError("need at least 2 classes");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("hidden layer width must be positive");
  }
  if (pooling == Pooling::Attentive && attention_dim == 0) {
    throw ConfigError("attentive pooling needs a positive attention dimension");
  }
}

ParamCount param_count(const DanConfig& config) {
  config.validate();
  ParamCount c;
  c.sparse = static_cast<std::uint64_t>(config.vocab_size) * config.embed_dim;
  std::uint64_t in = config.head_input_dim();
  auto add_layer = [&](std::uint64_t out) {
    c.dense += in * out + out;
    in = out;
  };
  for (auto w : config.hidden) add_layer(w);
  add_layer(config.n_classes);
  if (config.pooling == Pooling::Attentive) {
    c.dense += 2 * static_cast<std::uint64_t>(config.attention_dim) * config.embed_dim +
               config.attention_dim;
  }
  c.total = c.sparse + c.dense;
  return c;
}

template <typename T>
std::vector<std::span<T>> DanWeights<T>::dense_tensors() {
  std::vector<std::span<T>> out;
  for (auto& layer : layers) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  if (attention) {
    out.emplace_back(attention->key_proj);
    out.emplace_back(attention->query_proj);
    out.emplace_back(attention->score);
  }
  return out;
}

template <typename T>
std::vector<std::span<const T>> DanWeights<T>::dense_tensors() const {
  std::vector<std::span<const T>> out;
  for (const auto& layer : layers) {
    out.emplace_back(layer.weight);
    out.emplace_back(layer.bias);
  }
  if (attention) {
    out.emplace_back(attention->key_proj);
    out.emplace_back(attention->query_proj);
    out.emplace_back(attention->score);
  }
  return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (auto& p : out) p /= sum;
  return out;
}

template <typename T>
int argmax(std::span<const T> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

template <typename T>
BasicDanModel<T>::BasicDanModel(std::shared_ptr<const NgramVocab> vocab, DanConfig config,
                                std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  if (!vocab_) throw ConfigError("model needs a vocabulary");
  config_.vocab_size = vocab_->size();
  config_.validate();

  std::mt19937_64 rng(seed);
  const std::size_t d = config_.embed_dim;
  weights_.embedding.resize(config_.vocab_size * d);
  fill_uniform(weights_.embedding, 0.1 / std::sqrt(static_cast<double>(d)), rng);

  std::size_t in = config_.head_input_dim();
  auto add_layer = [&](std::size_t out) {
    DenseLayer<T> layer{in, out, std::vector<T>(in * out), std::vector<T>(out)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(layer.weight, bound, rng);
    fill_uniform(layer.bias, bound, rng);
    weights_.layers.push_back(std::move(layer));
    in = out;
  };
  for (auto w : config_.hidden) add_layer(w);
  add_layer(config_.n_classes);

  if (config_.pooling == Pooling::Attentive) {
    const std::size_t a = config_.attention_dim;
    AttentionParams<T> att{std::vector<T>(a * d), std::vector<T>(a * d), std::vector<T>(a)};
    fill_uniform(att.key_proj, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    fill_uniform(att.query_proj, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    fill_uniform(att.score, 1.0 / std::sqrt(static_cast<double>(a)), rng);
    weights_.attention = std::move(att);
  }
}

template <typename T>
BasicDanModel<T>::BasicDanModel(std::shared_ptr<const NgramVocab> vocab, DanConfig config,
                                DanWeights<T> weights)
    : config_(std::move(config)), vocab_(std::move(vocab)), weights_(std::move(weights)) {
  if (!vocab_) throw ConfigError("model needs a vocabulary");
  config_.validate();
  if (config_.vocab_size != vocab_->size()) {
    throw StructuralError("model has " + std::to_string(config_.vocab_size) +
                          " embedding rows but the vocabulary has " +
                          std::to_string(vocab_->size()) + " entries");
  }
  const std::size_t d = config_.embed_dim;
  if (weights_.embedding.size() != config_.vocab_size * d) {
    throw StructuralError("embedding table size does not match |V| x d_e");
  }
  if (weights_.layers.size() != config_.hidden.size() + 1) {
    throw StructuralError("layer count does not match hidden widths");
  }
  std::size_t in = config_.head_input_dim();
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& layer = weights_.layers[l];
    const std::size_t out = l < config_.hidden.size() ? config_.hidden[l] : config_.n_classes;
    if (layer.in != in || layer.out != out || layer.weight.size() != in * out ||
        layer.bias.size() != out) {
      throw StructuralError("dense layer " + std::to_string(l) + " has inconsistent shape");
    }
    in = out;
  }
  const bool attentive = config_.pooling == Pooling::Attentive;
  if (attentive != weights_.attention.has_value()) {
    throw StructuralError("attention parameters present iff pooling is attentive");
  }
  if (attentive) {
    const std::size_t a = config_.attention_dim;
    const auto& att = *weights_.attention;
    if (att.key_proj.size() != a * d || att.query_proj.size() != a * d || att.score.size() != a) {
      throw StructuralError("attention parameters have inconsistent shape");
    }
  }
}

template <typename T>
std::span<T> BasicDanModel<T>::embedding_row(std::uint32_t id) {
  return std::span<T>(weights_.embedding).subspan(std::size_t{id} * config_.embed_dim,
                                                  config_.embed_dim);
}

template <typename T>
std::span<const T> BasicDanModel<T>::embedding_row(std::uint32_t id) const {
  return std::span<const T>(weights_.embedding)
      .subspan(std::size_t{id} * config_.embed_dim, config_.embed_dim);
}

template <typename T>
void BasicDanModel<T>::check_ids(std::span<const std::uint32_t> ids) const {
  for (auto id : ids) {
    if (id >= config_.vocab_size) {
      throw StructuralError("n-gram id " + std::to_string(id) + " out of range for |V|=" +
                            std::to_string(config_.vocab_size) +
                            " (featurized under a different vocabulary?)");
    }
  }
}

template <typename T>
std::vector<T> BasicDanModel<T>::pool(std::span<const std::uint32_t> ids) const {
  check_ids(ids);
  std::vector<T> out(config_.embed_dim);
  pool_into(ids, nullptr, out);
  return out;
}

template <typename T>
void BasicDanModel<T>::pool_into(std::span<const std::uint32_t> ids, SideTrace<T>* trace,
                                 std::span<T> out) const {
  const std::size_t d = config_.embed_dim;
  std::fill(out.begin(), out.end(), T(0));
  if (trace) {
    trace->query.clear();
    trace->attention.clear();
    trace->attention_hidden.clear();
    trace->argmax.clear();
  }
  if (ids.empty()) return;
  const T k = static_cast<T>(ids.size());

  switch (config_.pooling) {
    case Pooling::Sum:
    case Pooling::Mean: {
      for (auto id : ids) {
        const T* row = weights_.embedding.data() + std::size_t{id} * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
      }
      if (config_.pooling == Pooling::Mean) {
        for (auto& x : out) x /= k;
      }
      break;
    }
    case Pooling::Max: {
      std::vector<std::uint32_t> winner(d, 0);
      const T* first = weights_.embedding.data() + std::size_t{ids[0]} * d;
      std::copy(first, first + d, out.begin());
      for (std::size_t i = 1; i < ids.size(); ++i) {
        const T* row = weights_.embedding.data() + std::size_t{ids[i]} * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (row[j] > out[j]) {
            out[j] = row[j];
            winner[j] = static_cast<std::uint32_t>(i);
          }
        }
      }
      if (trace) trace->argmax = std::move(winner);
      break;
    }
    case Pooling::Attentive: {
      const auto& att = *weights_.attention;
      const std::size_t a = config_.attention_dim;
      std::vector<T> query(d, T(0));
      for (auto id : ids) {
        const T* row = weights_.embedding.data() + std::size_t{id} * d;
        for (std::size_t j = 0; j < d; ++j) query[j] += row[j];
      }
      for (auto& x : query) x /= k;
      std::vector<T> query_proj(a);
      for (std::size_t r = 0; r < a; ++r) {
        const T* w = att.query_proj.data() + r * d;
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += w[j] * query[j];
        query_proj[r] = acc;
      }
      std::vector<T> hidden(ids.size() * a);
      std::vector<T> scores(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const T* row = weights_.embedding.data() + std::size_t{ids[i]} * d;
        T u = 0;
        for (std::size_t r = 0; r < a; ++r) {
          const T* w = att.key_proj.data() + r * d;
          T acc = query_proj[r];
          for (std::size_t j = 0; j < d; ++j) acc += w[j] * row[j];
          const T t = std::tanh(acc);
          hidden[i * a + r] = t;
          u += att.score[r] * t;
        }
        scores[i] = u;
      }
      std::vector<T> weights = softmax<T>(scores);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const T* row = weights_.embedding.data() + std::size_t{ids[i]} * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += weights[i] * row[j];
      }
      if (trace) {
        trace->query = std::move(query);
        trace->attention = std::move(weights);
        trace->attention_hidden = std::move(hidden);
      }
      break;
    }
  }
}

template <typename T>
void BasicDanModel<T>::features_into(const Example& example, std::vector<SideTrace<T>>* sides,
                                     std::span<T> out) const {
  const std::size_t d = config_.embed_dim;
  if (const auto* single = std::get_if<FeaturizedExample>(&example)) {
    if (config_.pair_mode) throw StructuralError("pair-mode model given a single-sentence example");
    check_ids(single->ids);
    SideTrace<T>* trace = nullptr;
    if (sides) {
      sides->resize(1);
      trace = &(*sides)[0];
    }
    pool_into(single->ids, trace, out);
    if (trace) trace->pooled.assign(out.begin(), out.end());
    return;
  }
  const auto& pair = std::get<PairExample>(example);
  if (!config_.pair_mode) throw StructuralError("single-sentence model given a pair example");
  check_ids(pair.left.ids);
  check_ids(pair.right.ids);
  SideTrace<T>* left_trace = nullptr;
  SideTrace<T>* right_trace = nullptr;
  if (sides) {
    sides->resize(2);
    left_trace = &(*sides)[0];
    right_trace = &(*sides)[1];
  }
  auto h1 = out.subspan(0, d);
  auto h2 = out.subspan(d, d);
  pool_into(pair.left.ids, left_trace, h1);
  pool_into(pair.right.ids, right_trace, h2);
  for (std::size_t j = 0; j < d; ++j) {
    out[2 * d + j] = h1[j] * h2[j];
    out[3 * d + j] = std::abs(h1[j] - h2[j]);
  }
  if (sides) {
    left_trace->pooled.assign(h1.begin(), h1.end());
    right_trace->pooled.assign(h2.begin(), h2.end());
  }
}

template <typename T>
ForwardTrace<T> BasicDanModel<T>::forward(const Example& example) const {
  ForwardTrace<T> trace;
  trace.features.resize(config_.head_input_dim());
  features_into(example, &trace.sides, trace.features);

  std::vector<T> x = trace.features;
  const std::size_t n_layers = weights_.layers.size();
  trace.pre.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = weights_.layers[l];
    trace.pre[l].resize(layer.out);
    affine<T>(layer, x, trace.pre[l]);
    if (l + 1 < n_layers) {
      x = trace.pre[l];
      for (auto& v : x) v = std::max(v, T(0));
      trace.post.push_back(x);
    }
  }
  trace.logits = trace.pre.back();
  trace.probs = softmax<T>(trace.logits);
  return trace;
}

template <typename T>
std::vector<T> BasicDanModel<T>::predict_batch(std::span<const Example> batch) const {
  const std::size_t b = batch.size();
  std::size_t width = config_.head_input_dim();
  std::vector<T> x(b * width);
  for (std::size_t i = 0; i < b; ++i) {
    features_into(batch[i], nullptr, std::span<T>(x).subspan(i * width, width));
  }
  std::vector<T> y;
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& layer = weights_.layers[l];
    y.assign(b * layer.out, T(0));
    for (std::size_t o = 0; o < layer.out; ++o) {
      const T* w = layer.weight.data() + o * layer.in;
      for (std::size_t i = 0; i < b; ++i) {
        const T* xi = x.data() + i * layer.in;
        T acc = layer.bias[o];
        for (std::size_t j = 0; j < layer.in; ++j) acc += w[j] * xi[j];
        y[i * layer.out + o] = (l + 1 < weights_.layers.size()) ? std::max(acc, T(0)) : acc;
      }
    }
    x.swap(y);
    width = layer.out;
  }
  for (std::size_t i = 0; i < b; ++i) {
    auto row = std::span<T>(x).subspan(i * width, width);
    auto p = softmax<T>(std::span<const T>(row));
    std::copy(p.begin(), p.end(), row.begin());
  }
  return x;
}

template <typename T>
template <typename U>
BasicDanModel<U> BasicDanModel<T>::cast() const {
  DanWeights<U> w;
  w.embedding = convert<T, U>(weights_.embedding);
  for (const auto& layer : weights_.layers) {
    w.layers.push_back(
        DenseLayer<U>{layer.in, layer.out, convert<T, U>(layer.weight), convert<T, U>(layer.bias)});
  }
  if (weights_.attention) {
    w.attention = AttentionParams<U>{convert<T, U>(weights_.attention->key_proj),
                                     convert<T, U>(weights_.attention->query_proj),
                                     convert<T, U>(weights_.attention->score)};
  }
  return BasicDanModel<U>(vocab_, config_, std::move(w));
}

template struct DanWeights<double>;
template struct DanWeights<float>;
template class BasicDanModel<double>;
template class BasicDanModel<float>;
template BasicDanModel<float> BasicDanModel<double>::cast<float>() const;
template BasicDanModel<double> BasicDanModel<double>::cast<double>() const;
template BasicDanModel<double> BasicDanModel<float>::cast<double>() const;
template std::vector<double> softmax<double>(std::span<const double>);
template std::vector<float> softmax<float>(std::span<const float>);
template int argmax<double>(std::span<const double>);
template int argmax<float>(std::span<const float>);

void save_model(const DanModel& model, const std::filesystem::path& path) {
  const auto& c = model.config();
  io::BinaryWriter out(kModelMagic, kModelVersion);
  out.put(static_cast<std::uint64_t>(c.vocab_size));
  out.put(static_cast<std::uint64_t>(c.embed_dim));
  out.put(static_cast<std::uint64_t>(c.hidden.size()));
  for (auto w : c.hidden) out.put(static_cast<std::uint64_t>(w));
  out.put(static_cast<std::uint64_t>(c.n_classes));
  out.put(static_cast<std::uint8_t>(c.pooling));
  out.put(static_cast<std::uint8_t>(c.pair_mode ? 1 : 0));
  out.put(static_cast<std::uint64_t>(c.attention_dim));
  write_vocab_body(out, model.vocab());
  for (auto tensor : model.weights().dense_tensors()) out.put_span(tensor);
  out.put_span(std::span<const double>(model.weights().embedding));
  out.commit(path);
}

DanModel load_model(const std::filesystem::path& path) {
  io::BinaryReader in(path, kModelMagic, kModelVersion);
  DanConfig c;
  auto get_size = [&](std::uint64_t limit, const char* what) {
    const auto v = in.get<std::uint64_t>();
    if (v > limit) in.fail(std::string("implausible ") + what);
    return static_cast<std::size_t>(v);
  };
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 40;
  c.vocab_size = get_size(kLimit, "vocabulary size");
  c.embed_dim = get_size(kLimit, "embedding dimension");
  const std::size_t n_hidden = get_size(1024, "hidden layer count");
  c.hidden.clear();
  for (std::size_t i = 0; i < n_hidden; ++i) c.hidden.push_back(get_size(kLimit, "hidden width"));
  c.n_classes = get_size(kLimit, "class count");
  const auto pooling = in.get<std::uint8_t>();
  if (pooling > 3) in.fail("invalid pooling tag");
  c.pooling = static_cast<Pooling>(pooling);
  c.pair_mode = in.get<std::uint8_t>() != 0;
  c.attention_dim = get_size(kLimit, "attention dimension");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    in.fail(std::string("invalid model config: ") + e.what());
  }
  auto vocab = std::make_shared<const NgramVocab>(read_vocab_body(in));

  // Shapes come from a config that was just validated.
  DanWeights<double> w;
  std::size_t fan_in = c.head_input_dim();
  auto layer_out = [&](std::size_t l) { return l < c.hidden.size() ? c.hidden[l] : c.n_classes; };
  for (std::size_t l = 0; l <= c.hidden.size(); ++l) {
    const std::size_t out = layer_out(l);
    w.layers.push_back(DenseLayer<double>{fan_in, out, {}, {}});
    fan_in = out;
  }
  auto read_blob = [&](std::vector<double>& blob, std::size_t rows, std::size_t cols) {
    const std::size_t capacity = in.remaining() / sizeof(double);
    if (rows > 0 && cols > capacity / rows) in.fail("truncated weight blob");
    blob.resize(rows * cols);
    in.get_span(std::span<double>(blob));
  };
  for (auto& layer : w.layers) {
    read_blob(layer.weight, layer.out, layer.in);
    read_blob(layer.bias, layer.out, 1);
  }
  if (c.pooling == Pooling::Attentive) {
    AttentionParams<double> att;
    read_blob(att.key_proj, c.attention_dim, c.embed_dim);
    read_blob(att.query_proj, c.attention_dim, c.embed_dim);
    read_blob(att.score, c.attention_dim, 1);
    w.attention = std::move(att);
  }
  read_blob(w.embedding, c.vocab_size, c.embed_dim);
  in.expect_end();
  try {
    return DanModel(std::move(vocab), std::move(c), std::move(w));
  } catch (const StructuralError& e) {
    in.fail(std::string("inconsistent model file: ") + e.what());
  }
}

}  // namespace sparsedan
