// SPDX-License-Identifier: Apache-2.0
#include "sparsedan/dataset.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <json.hpp>

#include "sparsedan/errors.hpp"

namespace sparsedan {
namespace {

using nlohmann::json;

constexpr double kProbTolerance = 1e-6;

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

bool has_jsonl_extension(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".json" || ext == ".ndjson";
}

// Decodes one JSON object into `out`. Returns an error message, or an empty
// string on success. Label/probs presence is not enforced here.
std::string decode_record(const json& obj, Record& out) {
  if (!obj.is_object()) return "line is not a JSON object";
  const bool single = obj.contains("text");
  const bool pair = obj.contains("text1") || obj.contains("text2");
  if (single && pair) return "record mixes \"text\" with \"text1\"/\"text2\"";
  if (single) {
    if (!obj["text"].is_string()) return "\"text\" must be a string";
    out.text = obj["text"].get<std::string>();
  } else if (pair) {
    if (!obj.contains("text1") || !obj["text1"].is_string() || !obj.contains("text2") ||
        !obj["text2"].is_string()) {
      return "pair records need string \"text1\" and \"text2\"";
    }
    out.text = obj["text1"].get<std::string>();
    out.text2 = obj["text2"].get<std::string>();
  } else {
    return "missing \"text\" field";
  }

  if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_integer()) return "\"label\" must be an integer";
    const auto v = it->get<std::int64_t>();
    if (v < 0 || v > std::numeric_limits<int>::max()) return "\"label\" must be non-negative";
    out.label = static_cast<int>(v);
  }
  if (auto it = obj.find("probs"); it != obj.end() && !it->is_null()) {
    if (!it->is_array() || it->empty()) return "\"probs\" must be a non-empty array";
    double sum = 0.0;
    for (const auto& p : *it) {
      if (!p.is_number()) return "\"probs\" entries must be numbers";
      const double v = p.get<double>();
      if (!std::isfinite(v) || v < 0.0) return "\"probs\" entries must be finite and >= 0";
      out.probs.push_back(v);
      sum += v;
    }
    if (std::abs(sum - 1.0) > kProbTolerance) {
      return "\"probs\" sums to " + std::to_string(sum) + ", expected 1";
    }
  }
  return {};
}

template <typename Visit>
void for_each_line(const std::filesystem::path& path, Visit&& visit) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    visit(number, line);
  }
  if (in.bad()) throw IoError("read error in " + path.string());
}

}  // namespace

std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  std::vector<Record> records;
  for_each_line(path, [&](std::size_t number, const std::string& line) {
    if (is_blank(line)) return;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataValidationError(std::string("malformed JSON: ") + e.what(), number);
    }
    Record r;
    r.line = number;
    if (auto err = decode_record(obj, r); !err.empty()) throw DataValidationError(err, number);
    records.push_back(std::move(r));
  });
  return records;
}

void write_jsonl(std::span<const Record> records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    json obj;
    if (r.text2) {
      obj["text1"] = r.text;
      obj["text2"] = *r.text2;
    } else {
      obj["text"] = r.text;
    }
    if (r.label) obj["label"] = *r.label;
    if (!r.probs.empty()) obj["probs"] = r.probs;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::string> read_documents(const std::filesystem::path& path) {
  if (has_jsonl_extension(path)) return texts_of(read_jsonl(path));
  std::vector<std::string> docs;
  for_each_line(path, [&](std::size_t, const std::string& line) { docs.push_back(line); });
  return docs;
}

DocumentSource stream_documents(std::vector<std::filesystem::path> files) {
  struct State {
    std::vector<std::filesystem::path> files;
    std::size_t next_file = 0;
    std::ifstream in;
    bool jsonl = false;
    std::size_t line_number = 0;
    std::optional<std::string> pending;  // second side of a pair record
  };
  auto state = std::make_shared<State>();
  state->files = std::move(files);
  return [state](std::string& doc) {
    State& s = *state;
    if (s.pending) {
      doc = std::move(*s.pending);
      s.pending.reset();
      return true;
    }
    std::string line;
    while (true) {
      if (!s.in.is_open()) {
        if (s.next_file == s.files.size()) return false;
        const auto& path = s.files[s.next_file++];
        s.in.open(path);
        if (!s.in) throw IoError("cannot open " + path.string());
        s.jsonl = has_jsonl_extension(path);
        s.line_number = 0;
      }
      if (!std::getline(s.in, line)) {
        if (s.in.bad()) throw IoError("read error in " + s.files[s.next_file - 1].string());
        s.in.close();
        s.in.clear();
        continue;
      }
      ++s.line_number;
      if (!s.jsonl) {
        doc = std::move(line);
        return true;
      }
      if (is_blank(line)) continue;
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw DataValidationError(std::string("malformed JSON: ") + e.what(), s.line_number);
      }
      Record r;
      if (auto err = decode_record(obj, r); !err.empty()) {
        throw DataValidationError(err, s.line_number);
      }
      doc = std::move(r.text);
      s.pending = std::move(r.text2);
      return true;
    }
  };
}

std::vector<std::string> texts_of(std::span<const Record> records) {
  std::vector<std::string> docs;
  docs.reserve(records.size());
  for (const auto& r : records) {
    docs.push_back(r.text);
    if (r.text2) docs.push_back(*r.text2);
  }
  return docs;
}

Example to_example(const Record& record, const NgramVocab& vocab,
                   std::optional<std::size_t> n_cutoff) {
  if (record.text2) {
    PairExample pair = featurize_pair(record.text, *record.text2, vocab, n_cutoff);
    pair.label = record.label;
    pair.teacher_probs = record.probs;
    pair.source_line = record.line;
    return pair;
  }
  FeaturizedExample ex = featurize(record.text, vocab, n_cutoff);
  ex.label = record.label;
  ex.teacher_probs = record.probs;
  ex.source_line = record.line;
  return ex;
}

std::vector<Example> to_examples(std::span<const Record> records, const NgramVocab& vocab,
                                 std::optional<std::size_t> n_cutoff) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_example(r, vocab, n_cutoff));
  return out;
}

DataKind parse_data_kind(std::string_view text) {
  if (text == "labeled") return DataKind::Labeled;
  if (text == "soft" || text == "soft-labels") return DataKind::SoftLabels;
  if (text == "unlabeled") return DataKind::Unlabeled;
  if (text == "any") return DataKind::Any;
  throw ConfigError("unknown data kind '" + std::string(text) +
                    "' (expected labeled, soft, unlabeled or any)");
}

ValidationReport validate_data(const std::filesystem::path& path, DataKind kind,
                               std::optional<std::size_t> n_classes) {
  ValidationReport report;
  auto flag = [&](std::size_t line, std::string message) {
    ++report.total_violations;
    if (report.violations.size() < ValidationReport::kMaxReported) {
      report.violations.push_back(Violation{line, std::move(message)});
    }
  };
  std::optional<std::size_t> width = n_classes;
  for_each_line(path, [&](std::size_t number, const std::string& line) {
    ++report.lines;
    if (is_blank(line)) return;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error&) {
      flag(number, "malformed JSON");
      return;
    }
    Record r;
    if (auto err = decode_record(obj, r); !err.empty()) {
      flag(number, err);
      return;
    }
    if (kind == DataKind::Labeled && !r.label) flag(number, "missing \"label\"");
    if (kind == DataKind::SoftLabels && r.probs.empty()) flag(number, "missing \"probs\"");
    if (r.label && n_classes && static_cast<std::size_t>(*r.label) >= *n_classes) {
      flag(number, "label " + std::to_string(*r.label) + " out of range for " +
                       std::to_string(*n_classes) + " classes");
    }
    if (!r.probs.empty()) {
      if (!width) {
        width = r.probs.size();
      } else if (r.probs.size() != *width) {
        flag(number, "\"probs\" has " + std::to_string(r.probs.size()) + " entries, expected " +
                         std::to_string(*width));
      }
    }
  });
  return report;
}

}  // namespace sparsedan
