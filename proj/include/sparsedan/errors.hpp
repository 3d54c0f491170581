// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sparsedan {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (n-gram range, keep counts, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Vocabulary construction was given no documents at all.
class EmptyCorpusError : public Error {
 public:
  EmptyCorpusError() : Error("empty corpus: no documents to count n-grams from") {}
};

/// A binary container is truncated or fails its checksum.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A binary container was written by an unsupported format version.
class VersionError : public Error {
 public:
  VersionError(std::uint32_t found, std::uint32_t expected)
      : Error("unsupported format version " + std::to_string(found) +
              " (expected " + std::to_string(expected) + ")"),
        found_(found) {}
  std::uint32_t found() const noexcept { return found_; }

 private:
  std::uint32_t found_;
};

/// Shapes do not agree (model vs. vocab, teacher vs. student, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Coverage ratio of an example with no extracted n-grams.
class UndefinedCoverageError : public Error {
 public:
  UndefinedCoverageError() : Error("coverage undefined: example has no n-grams") {}
};

/// A dataset record is missing a field required by the current stage.
class DataValidationError : public Error {
 public:
  DataValidationError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparsedan
