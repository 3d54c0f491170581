// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/config.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>

#include "sparsedan/errors.hpp"

namespace sparsedan {

KeyValueConfig KeyValueConfig::parse(std::istream& in, std::string origin) {
  KeyValueConfig cfg;
  cfg.origin_ = std::move(origin);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(cfg.origin_ + ": " + e.what());
  }
  for (auto& item : items) {
    // Section open/close markers.
    if (item.name == "++" || item.name == "--") continue;
    cfg.set(item.fullname(), std::move(item.inputs));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse(in, path.string());
}

void KeyValueConfig::set(std::string key, std::vector<std::string> values) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    order_.push_back(key);
    values_.emplace(std::move(key), std::move(values));
  } else {
    it->second = std::move(values);
  }
}

const std::vector<std::string>* KeyValueConfig::find(std::string_view key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

bool KeyValueConfig::has(std::string_view key) const { return find(key) != nullptr; }

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
  const auto* v = find(key);
  if (!v) return std::nullopt;
  if (v->size() != 1) bad_value(key, "a single value");
  return v->front();
}

std::vector<std::string> KeyValueConfig::get_list(std::string_view key) const {
  const auto* v = find(key);
  return v ? *v : std::vector<std::string>{};
}

std::string KeyValueConfig::get_or(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : std::move(fallback);
}

void KeyValueConfig::bad_value(std::string_view key, std::string_view expected) const {
  throw ConfigError(origin_ + ": key '" + std::string(key) + "' must be " + std::string(expected));
}

namespace {

template <typename T>
std::optional<T> parse_number(const std::string& text) {
  T value{};
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

}  // namespace

std::size_t KeyValueConfig::get_size(std::string_view key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

std::uint64_t KeyValueConfig::get_u64(std::string_view key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto n = parse_number<std::uint64_t>(*v);
  if (!n) bad_value(key, "a non-negative integer");
  return *n;
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto n = parse_number<double>(*v);
  if (!n) bad_value(key, "a number");
  return *n;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  bad_value(key, "true or false");
}

std::vector<std::size_t> KeyValueConfig::get_size_list(std::string_view key) const {
  std::vector<std::size_t> out;
  for (const auto& item : get_list(key)) {
    auto n = parse_number<std::uint64_t>(item);
    if (!n) bad_value(key, "a list of non-negative integers");
    out.push_back(static_cast<std::size_t>(*n));
  }
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(std::string_view key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) {
    auto n = parse_number<double>(item);
    if (!n) bad_value(key, "a list of numbers");
    out.push_back(*n);
  }
  return out;
}

void KeyValueConfig::reject_unknown(std::string_view section,
                                    std::span<const std::string_view> known) const {
  for (const auto& key : order_) {
    std::string_view name = key;
    if (section.empty()) {
      if (name.find('.') != std::string_view::npos) continue;
    } else {
      if (name.size() <= section.size() + 1 || name.substr(0, section.size()) != section ||
          name[section.size()] != '.') {
        continue;
      }
      name.remove_prefix(section.size() + 1);
    }
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError(origin_ + ": unknown key '" + key + "'");
    }
  }
}

std::vector<std::string> KeyValueConfig::keys() const { return order_; }

KeyValueConfig KeyValueConfig::without_section(std::string_view section) const {
  KeyValueConfig out;
  out.origin_ = origin_;
  for (const auto& key : order_) {
    const bool inside = key.size() > section.size() && key.compare(0, section.size(), section) == 0 &&
                        key[section.size()] == '.';
    if (!inside) out.set(key, values_.find(key)->second);
  }
  return out;
}

namespace {

std::string key_of(std::string_view section, std::string_view name) {
  return section.empty() ? std::string(name) : std::string(section) + "." + std::string(name);
}

}  // namespace

VocabConfig vocab_config_from(const KeyValueConfig& cfg, std::string_view section,
                              VocabConfig base) {
  static constexpr std::string_view kKnown[] = {"nmin",    "nmax",          "topk",     "tie_break",
                                                "source",  "workers",       "spill_dir",
                                                "max_in_memory"};
  cfg.reject_unknown(section, kKnown);
  auto k = [&](std::string_view name) { return key_of(section, name); };
  base.range.min = static_cast<std::uint32_t>(cfg.get_size(k("nmin"), base.range.min));
  base.range.max = static_cast<std::uint32_t>(cfg.get_size(k("nmax"), base.range.max));
  base.top_k = cfg.get_size(k("topk"), base.top_k);
  if (auto v = cfg.get(k("tie_break"))) base.tie_break = parse_tie_break(*v);
  if (auto v = cfg.get(k("source"))) base.source = parse_vocab_source(*v);
  base.workers = cfg.get_size(k("workers"), base.workers);
  base.max_in_memory = cfg.get_size(k("max_in_memory"), base.max_in_memory);
  if (auto v = cfg.get(k("spill_dir"))) base.spill_dir = *v;
  base.validate();
  return base;
}

DanConfig model_config_from(const KeyValueConfig& cfg, std::string_view section, DanConfig base) {
  static constexpr std::string_view kKnown[] = {"embed_dim", "hidden",    "n_classes",
                                                "pooling",   "pair_mode", "attention_dim"};
  cfg.reject_unknown(section, kKnown);
  auto k = [&](std::string_view name) { return key_of(section, name); };
  base.embed_dim = cfg.get_size(k("embed_dim"), base.embed_dim);
  if (cfg.has(k("hidden"))) base.hidden = cfg.get_size_list(k("hidden"));
  base.n_classes = cfg.get_size(k("n_classes"), base.n_classes);
  if (auto v = cfg.get(k("pooling"))) base.pooling = parse_pooling(*v);
  base.pair_mode = cfg.get_bool(k("pair_mode"), base.pair_mode);
  base.attention_dim = cfg.get_size(k("attention_dim"), base.attention_dim);
  return base;
}

TrainConfig train_config_from(const KeyValueConfig& cfg, std::string_view section, LossMode mode) {
  static constexpr std::string_view kKnown[] = {"lr",          "beta1",  "beta2",
                                                "eps",         "batch_size", "steps",
                                                "epochs",      "eval_interval", "temperature",
                                                "workers"};
  cfg.reject_unknown(section, kKnown);
  auto k = [&](std::string_view name) { return key_of(section, name); };
  TrainConfig tc = TrainConfig::defaults(mode);
  tc.adam.lr = cfg.get_double(k("lr"), tc.adam.lr);
  tc.adam.beta1 = cfg.get_double(k("beta1"), tc.adam.beta1);
  tc.adam.beta2 = cfg.get_double(k("beta2"), tc.adam.beta2);
  tc.adam.eps = cfg.get_double(k("eps"), tc.adam.eps);
  tc.batch_size = cfg.get_size(k("batch_size"), tc.batch_size);
  tc.steps = cfg.get_size(k("steps"), tc.steps);
  tc.epochs = cfg.get_size(k("epochs"), tc.epochs);
  tc.eval_interval = cfg.get_size(k("eval_interval"), tc.eval_interval);
  tc.temperature = cfg.get_double(k("temperature"), tc.temperature);
  tc.workers = cfg.get_size(k("workers"), default_threads());
  tc.validate();
  return tc;
}

std::size_t default_threads() {
  const char* env = std::getenv("SPARSEDAN_THREADS");
  if (!env || !*env) return 1;
  auto n = parse_number<std::uint64_t>(env);
  if (!n || *n == 0) throw ConfigError("SPARSEDAN_THREADS must be a positive integer");
  return static_cast<std::size_t>(*n);
}

}  // namespace sparsedan
