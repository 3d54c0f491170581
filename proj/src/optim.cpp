// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "sparsedan/binary_io.hpp"
#include "sparsedan/errors.hpp"

namespace sparsedan {

std::string_view to_string(LossMode mode) noexcept { return mode == LossMode::KD ? "kd" : "ft"; }

double kd_loss(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) {
    throw StructuralError("teacher has " + std::to_string(teacher.size()) +
                          " classes, student has " + std::to_string(student.size()));
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < teacher.size(); ++j) {
    if (teacher[j] > 0.0) loss += teacher[j] * (std::log(teacher[j]) - std::log(student[j]));
  }
  return loss;
}

double ft_loss(int label, std::span<const double> student) {
  if (label < 0 || static_cast<std::size_t>(label) >= student.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(student.size()) + " classes");
  }
  return -std::log(student[static_cast<std::size_t>(label)]);
}

// ---------------------------------------------------------------------------
// Sparse row gradient

const double* SparseRowGradient::find(std::uint32_t row) const {
  auto it = slots_.find(row);
  return it == slots_.end() ? nullptr : values_.data() + it->second * dim_;
}

std::size_t SparseRowGradient::touch(std::uint32_t row) {
  auto [it, inserted] = slots_.try_emplace(row, rows_.size());
  if (inserted) {
    rows_.push_back(row);
    values_.resize(values_.size() + dim_, 0.0);
  }
  return it->second;
}

void SparseRowGradient::add(const SparseRowGradient& other) {
  for (std::size_t s = 0; s < other.rows_.size(); ++s) {
    const std::size_t slot = touch(other.rows_[s]);
    auto dst = slot_values(slot);
    auto src = other.values(s);
    for (std::size_t j = 0; j < dim_; ++j) dst[j] += src[j];
  }
}

void SparseRowGradient::scale(double factor) {
  for (auto& v : values_) v *= factor;
}

Gradients Gradients::zeros_like(const DanModel& model) {
  Gradients g;
  g.embedding = SparseRowGradient(model.config().embed_dim);
  for (auto tensor : model.weights().dense_tensors()) g.dense.emplace_back(tensor.size(), 0.0);
  return g;
}

// ---------------------------------------------------------------------------
// Backward pass

namespace {

std::vector<double> target_distribution(const Example& ex, LossMode mode, std::size_t n_classes) {
  if (mode == LossMode::KD) {
    const auto& probs = teacher_probs_of(ex);
    if (probs.empty()) {
      throw DataValidationError("distillation example has no teacher probabilities",
                                source_line_of(ex));
    }
    if (probs.size() != n_classes) {
      throw DataValidationError("teacher distribution has " + std::to_string(probs.size()) +
                                    " classes, model has " + std::to_string(n_classes),
                                source_line_of(ex));
    }
    return probs;
  }
  const auto& label = label_of(ex);
  if (!label) throw DataValidationError("fine-tuning example has no label", source_line_of(ex));
  if (*label < 0 || static_cast<std::size_t>(*label) >= n_classes) {
    throw DataValidationError("label " + std::to_string(*label) + " out of range",
                              source_line_of(ex));
  }
  std::vector<double> onehot(n_classes, 0.0);
  onehot[static_cast<std::size_t>(*label)] = 1.0;
  return onehot;
}

std::vector<double> tempered(const ForwardTrace<double>& trace, double temperature) {
  if (temperature == 1.0) return trace.probs;
  std::vector<double> scaled(trace.logits.size());
  for (std::size_t j = 0; j < scaled.size(); ++j) scaled[j] = trace.logits[j] / temperature;
  return softmax<double>(scaled);
}

const std::vector<std::uint32_t>& side_ids(const Example& ex, std::size_t side) {
  if (const auto* single = std::get_if<FeaturizedExample>(&ex)) return single->ids;
  const auto& pair = std::get<PairExample>(ex);
  return side == 0 ? pair.left.ids : pair.right.ids;
}

// Pushes dL/d(pooled) down to the embedding rows (and attention tensors).
void pool_backward(const DanModel& model, std::span<const std::uint32_t> ids,
                   const SideTrace<double>& trace, std::span<const double> grad,
                   Gradients& out) {
  if (ids.empty()) return;
  const std::size_t d = model.config().embed_dim;
  const double k = static_cast<double>(ids.size());
  auto& emb = out.embedding;

  switch (model.config().pooling) {
    case Pooling::Sum:
    case Pooling::Mean: {
      const double scale = model.config().pooling == Pooling::Mean ? 1.0 / k : 1.0;
      for (auto id : ids) {
        auto row = emb.slot_values(emb.touch(id));
        for (std::size_t j = 0; j < d; ++j) row[j] += scale * grad[j];
      }
      break;
    }
    case Pooling::Max: {
      for (auto id : ids) emb.touch(id);
      for (std::size_t j = 0; j < d; ++j) {
        const std::uint32_t winner = ids[trace.argmax[j]];
        emb.slot_values(emb.touch(winner))[j] += grad[j];
      }
      break;
    }
    case Pooling::Attentive: {
      const auto& att = *model.weights().attention;
      const std::size_t a = model.config().attention_dim;
      const std::size_t layer_tensors = 2 * model.weights().layers.size();
      auto& d_key = out.dense[layer_tensors];
      auto& d_query = out.dense[layer_tensors + 1];
      auto& d_score = out.dense[layer_tensors + 2];

      double g_dot_pooled = 0.0;
      for (std::size_t j = 0; j < d; ++j) g_dot_pooled += grad[j] * trace.pooled[j];

      std::vector<double> ds(ids.size() * a);
      std::vector<double> ds_sum(a, 0.0);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto e = model.embedding_row(ids[i]);
        double g_dot_e = 0.0;
        for (std::size_t j = 0; j < d; ++j) g_dot_e += grad[j] * e[j];
        const double du = trace.attention[i] * (g_dot_e - g_dot_pooled);
        const double* t = trace.attention_hidden.data() + i * a;
        for (std::size_t r = 0; r < a; ++r) {
          d_score[r] += du * t[r];
          const double s = du * att.score[r] * (1.0 - t[r] * t[r]);
          ds[i * a + r] = s;
          ds_sum[r] += s;
          double* wg_row = d_key.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) wg_row[j] += s * e[j];
        }
      }
      for (std::size_t r = 0; r < a; ++r) {
        double* wh_row = d_query.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) wh_row[j] += ds_sum[r] * trace.query[j];
      }
      // Shared term through the mean-pooled query: (1/k) W_h^T sum_i ds_i.
      std::vector<double> via_query(d, 0.0);
      for (std::size_t r = 0; r < a; ++r) {
        const double* w = att.query_proj.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) via_query[j] += w[j] * ds_sum[r] / k;
      }
      std::vector<double> de(d);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) de[j] = trace.attention[i] * grad[j] + via_query[j];
        for (std::size_t r = 0; r < a; ++r) {
          const double s = ds[i * a + r];
          const double* w = att.key_proj.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) de[j] += w[j] * s;
        }
        auto row = emb.slot_values(emb.touch(ids[i]));
        for (std::size_t j = 0; j < d; ++j) row[j] += de[j];
      }
      break;
    }
  }
}

// Accumulates the (unscaled) gradient of one example; returns its loss.
double accumulate_example(const DanModel& model, const Example& ex, LossMode mode,
                          double temperature, Gradients& out) {
  const auto& config = model.config();
  const auto trace = model.forward(ex);
  const auto target = target_distribution(ex, mode, config.n_classes);
  const auto student = tempered(trace, temperature);
  const double loss = kd_loss(target, student);

  const int predicted = argmax<double>(trace.probs);
  const int expected = argmax<double>(target);
  if (predicted == expected) ++out.correct;

  std::vector<double> dz(config.n_classes);
  for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = (student[j] - target[j]) / temperature;

  const auto& layers = model.weights().layers;
  std::vector<double> dx;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const std::vector<double>& x = l == 0 ? trace.features : trace.post[l - 1];
    auto& dw = out.dense[2 * l];
    auto& db = out.dense[2 * l + 1];
    dx.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double g = dz[o];
      if (g == 0.0) continue;
      db[o] += g;
      double* dw_row = dw.data() + o * layer.in;
      const double* w_row = layer.weight.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        dw_row[i] += g * x[i];
        dx[i] += w_row[i] * g;
      }
    }
    if (l > 0) {
      const auto& pre = trace.pre[l - 1];
      dz.resize(layer.in);
      for (std::size_t i = 0; i < layer.in; ++i) dz[i] = pre[i] > 0.0 ? dx[i] : 0.0;
    }
  }

  const std::size_t d = config.embed_dim;
  if (!config.pair_mode) {
    pool_backward(model, side_ids(ex, 0), trace.sides[0], dx, out);
  } else {
    const auto& h1 = trace.sides[0].pooled;
    const auto& h2 = trace.sides[1].pooled;
    std::vector<double> dh1(d), dh2(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = h1[j] - h2[j];
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      dh1[j] = dx[j] + dx[2 * d + j] * h2[j] + dx[3 * d + j] * sign;
      dh2[j] = dx[d + j] + dx[2 * d + j] * h1[j] - dx[3 * d + j] * sign;
    }
    pool_backward(model, side_ids(ex, 0), trace.sides[0], dh1, out);
    pool_backward(model, side_ids(ex, 1), trace.sides[1], dh2, out);
  }
  return loss;
}

}  // namespace

Gradients backward(std::span<const Example* const> batch, const DanModel& model, LossMode mode,
                   double temperature, std::size_t workers) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, batch.size()));

  // Examples are grouped into fixed-size chunks and the chunk sums are added
  // to the total in chunk order, so the result is bit-identical for any
  // worker count.
  constexpr std::size_t kChunk = 16;
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  workers = std::min(workers, std::max<std::size_t>(1, n_chunks));
  Gradients total = Gradients::zeros_like(model);
  double loss = 0.0;
  std::vector<Gradients> scratch;
  for (std::size_t w = 0; w < workers; ++w) scratch.push_back(Gradients::zeros_like(model));
  std::vector<double> losses(workers, 0.0);
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t round = 0; round * workers < n_chunks; ++round) {
    const std::size_t active = std::min(workers, n_chunks - round * workers);
    auto run = [&](std::size_t w) {
      try {
        const std::size_t begin = (round * workers + w) * kChunk;
        const std::size_t end = std::min(batch.size(), begin + kChunk);
        for (std::size_t i = begin; i < end; ++i) {
          losses[w] += accumulate_example(model, *batch[i], mode, temperature, scratch[w]);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (active == 1) {
      run(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t w = 0; w < active; ++w) threads.emplace_back(run, w);
      for (auto& t : threads) t.join();
    }
    for (std::size_t w = 0; w < active; ++w) {
      if (errors[w]) std::rethrow_exception(errors[w]);
    }
    for (std::size_t w = 0; w < active; ++w) {
      total.embedding.add(scratch[w].embedding);
      for (std::size_t t = 0; t < total.dense.size(); ++t) {
        for (std::size_t i = 0; i < total.dense[t].size(); ++i) total.dense[t][i] += scratch[w].dense[t][i];
      }
      total.correct += scratch[w].correct;
      loss += losses[w];
      losses[w] = 0.0;
      scratch[w].embedding = SparseRowGradient(model.config().embed_dim);
      for (auto& tensor : scratch[w].dense) std::fill(tensor.begin(), tensor.end(), 0.0);
      scratch[w].correct = 0;
    }
  }
  total.examples = batch.size();
  if (!batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    total.embedding.scale(inv);
    for (auto& tensor : total.dense) {
      for (auto& v : tensor) v *= inv;
    }
    total.loss = loss * inv;
  }
  return total;
}

Gradients backward(std::span<const Example> batch, const DanModel& model, LossMode mode,
                   double temperature, std::size_t workers) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return backward(std::span<const Example* const>(ptrs), model, mode, temperature, workers);
}

double batch_loss(std::span<const Example> batch, const DanModel& model, LossMode mode,
                  double temperature) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto trace = model.forward(ex);
    const auto target = target_distribution(ex, mode, model.config().n_classes);
    total += kd_loss(target, tempered(trace, temperature));
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Hybrid Adam

TrainState::TrainState(const DanModel& model, AdamHyper hyper)
    : hyper_(hyper), dim_(model.config().embed_dim) {
  for (auto tensor : model.weights().dense_tensors()) {
    dense_m_.emplace_back(tensor.size(), 0.0);
    dense_v_.emplace_back(tensor.size(), 0.0);
  }
}

std::uint64_t TrainState::row_steps(std::uint32_t row) const {
  auto it = slots_.find(row);
  return it == slots_.end() ? 0 : row_steps_[it->second];
}

std::span<const double> TrainState::row_first_moment(std::uint32_t row) const {
  auto it = slots_.find(row);
  if (it == slots_.end()) return {};
  return std::span<const double>(sparse_m_).subspan(it->second * dim_, dim_);
}

std::span<const double> TrainState::row_second_moment(std::uint32_t row) const {
  auto it = slots_.find(row);
  if (it == slots_.end()) return {};
  return std::span<const double>(sparse_v_).subspan(it->second * dim_, dim_);
}

std::size_t TrainState::slot_for(std::uint32_t row) {
  auto [it, inserted] = slots_.try_emplace(row, row_of_slot_.size());
  if (inserted) {
    row_of_slot_.push_back(row);
    row_steps_.push_back(0);
    sparse_m_.resize(sparse_m_.size() + dim_, 0.0);
    sparse_v_.resize(sparse_v_.size() + dim_, 0.0);
  }
  return it->second;
}

namespace {

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamHyper& h) {
  const double t = static_cast<double>(step);
  const double bias1 = 1.0 - std::pow(h.beta1, t);
  const double bias2 = 1.0 - std::pow(h.beta2, t);
  const double step_size = h.lr / bias1;
  const double sqrt_bias2 = std::sqrt(bias2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    param[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bias2 + h.eps);
  }
}

}  // namespace

void hybrid_adam_step(TrainState& state, DanModel& model, const Gradients& gradients) {
  auto tensors = model.weights().dense_tensors();
  if (tensors.size() != gradients.dense.size() || tensors.size() != state.dense_m_.size()) {
    throw StructuralError("gradient layout does not match the model");
  }
  ++state.global_step_;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    adam_update(tensors[t], gradients.dense[t], state.dense_m_[t], state.dense_v_[t],
                state.global_step_, state.hyper_);
  }

  const auto& emb = gradients.embedding;
  const std::size_t d = state.dim_;
  for (std::size_t s = 0; s < emb.size(); ++s) {
    const std::uint32_t row = emb.rows()[s];
    if (row >= model.config().vocab_size) throw StructuralError("gradient row out of range");
    const std::size_t slot = state.slot_for(row);
    const std::uint64_t steps = ++state.row_steps_[slot];
    adam_update(model.embedding_row(row), emb.values(s),
                std::span<double>(state.sparse_m_).subspan(slot * d, d),
                std::span<double>(state.sparse_v_).subspan(slot * d, d), steps, state.hyper_);
  }
}

// ---------------------------------------------------------------------------
// Training loop

TrainConfig TrainConfig::defaults(LossMode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode == LossMode::KD) {
    c.adam.lr = 5e-4;
    c.batch_size = 2048;
    c.eval_interval = 1000;
  } else {
    c.adam.lr = 1e-4;
    c.batch_size = 32;
    c.eval_interval = 0;
    c.epochs = 10;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (workers == 0) throw ConfigError("workers must be positive");
}

EvalResult evaluate(const DanModel& model, std::span<const Example> examples) {
  EvalResult r;
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& ex : examples) {
    const auto probs = model.predict(ex);
    const auto& label = label_of(ex);
    int expected;
    if (label) {
      expected = *label;
      loss += ft_loss(*label, probs);
    } else {
      const auto& teacher = teacher_probs_of(ex);
      if (teacher.empty()) {
        throw DataValidationError("evaluation example has neither label nor teacher probabilities",
                                  source_line_of(ex));
      }
      expected = argmax<double>(teacher);
      loss += kd_loss(teacher, probs);
    }
    if (argmax<double>(probs) == expected) ++correct;
  }
  r.count = examples.size();
  if (r.count > 0) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    r.loss = loss / static_cast<double>(r.count);
  }
  return r;
}

TrainResult train(DanModel& model, std::span<const Example> train_set,
                  std::span<const Example> dev_set, const TrainConfig& config) {
  config.validate();
  TrainResult result;
  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = n == 0 ? 0 : (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.steps > 0 ? config.steps : config.epochs * steps_per_epoch;
  if (total_steps == 0) return result;
  if (n == 0) throw ConfigError("training set is empty");

  // Fail fast on records the stage cannot use.
  for (const auto& ex : train_set) {
    (void)target_distribution(ex, config.mode, model.config().n_classes);
  }
  const std::size_t eval_interval = config.eval_interval > 0 ? config.eval_interval : steps_per_epoch;

  TrainState state(model, config.adam);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Example*> batch;
  batch.reserve(config.batch_size);

  std::optional<DanWeights<double>> best;
  double interval_loss = 0.0;
  std::size_t interval_examples = 0;
  std::size_t interval_correct = 0;
  std::size_t cursor = n;  // forces a shuffle on the first step

  auto checkpoint = [&](std::size_t step) {
    if (interval_examples > 0) {
      result.metrics.push_back(MetricRow{step, "train",
                                         interval_loss / static_cast<double>(interval_examples),
                                         static_cast<double>(interval_correct) /
                                             static_cast<double>(interval_examples)});
    }
    interval_loss = 0.0;
    interval_examples = 0;
    interval_correct = 0;
    if (dev_set.empty()) return;
    const EvalResult dev = evaluate(model, dev_set);
    result.metrics.push_back(MetricRow{step, "dev", dev.loss, dev.accuracy});
    if (!result.best_dev_accuracy || dev.accuracy > *result.best_dev_accuracy) {
      result.best_dev_accuracy = dev.accuracy;
      result.best_step = step;
      best = model.weights();
    }
  };

  for (std::size_t step = 1; step <= total_steps; ++step) {
    if (cursor >= n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    batch.clear();
    const std::size_t end = std::min(n, cursor + config.batch_size);
    for (; cursor < end; ++cursor) batch.push_back(&train_set[order[cursor]]);

    const Gradients grads = backward(batch, model, config.mode, config.temperature, config.workers);
    hybrid_adam_step(state, model, grads);
    result.steps_run = step;

    interval_loss += grads.loss * static_cast<double>(grads.examples);
    interval_examples += grads.examples;
    interval_correct += grads.correct;
    if (step % eval_interval == 0 || step == total_steps) checkpoint(step);
  }
  if (best) model.weights() = std::move(*best);
  return result;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "step,split,loss,accuracy\n";
  out.precision(10);
  for (const auto& r : rows) out << r.step << ',' << r.split << ',' << r.loss << ',' << r.accuracy << '\n';
  io::write_file_atomic(path, out.str());
}

}  // namespace sparsedan
