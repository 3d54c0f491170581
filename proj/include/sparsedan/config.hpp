// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/vocab.hpp"

namespace sparsedan {

/// Flat view of a TOML-style `key = value` file. Section headers prefix
/// their keys, so `[model]` followed by `embed_dim = 64` is "model.embed_dim".
/// Arrays keep one string per element.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in, std::string origin = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  std::string get_or(std::string_view key, std::string fallback) const;
  std::size_t get_size(std::string_view key, std::size_t fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<std::size_t> get_size_list(std::string_view key) const;
  std::vector<double> get_double_list(std::string_view key) const;

  /// Overrides or adds a key, e.g. from a command-line flag.
  void set(std::string key, std::vector<std::string> values);

  /// Throws ConfigError naming the first key under `section` (or the top
  /// level, for an empty section) that is not in `known`.
  void reject_unknown(std::string_view section, std::span<const std::string_view> known) const;

  /// Copy without the keys of `section`.
  KeyValueConfig without_section(std::string_view section) const;

  /// Keys in the order they were first seen.
  std::vector<std::string> keys() const;
  const std::string& origin() const noexcept { return origin_; }

 private:
  [[noreturn]] void bad_value(std::string_view key, std::string_view expected) const;
  const std::vector<std::string>* find(std::string_view key) const;

  std::string origin_ = "<config>";
  std::map<std::string, std::vector<std::string>, std::less<>> values_;
  std::vector<std::string> order_;
};

/// Section readers. Missing keys keep the value from `base`; unknown keys in
/// the section are rejected.
VocabConfig vocab_config_from(const KeyValueConfig& cfg, std::string_view section = "vocab",
                              VocabConfig base = {});
DanConfig model_config_from(const KeyValueConfig& cfg, std::string_view section = "model",
                            DanConfig base = {});
TrainConfig train_config_from(const KeyValueConfig& cfg, std::string_view section, LossMode mode);

/// Thread count from SPARSEDAN_THREADS, or 1 when unset.
std::size_t default_threads();

}  // namespace sparsedan
