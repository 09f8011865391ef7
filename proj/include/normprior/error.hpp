#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace normprior {

// Bad input from the caller: malformed files, invalid configs, precondition
// violations. The CLI maps these to exit code 1; anything else is internal.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A malformed record in a JSONL or text file.
class RecordError : public ValidationError {
 public:
  RecordError(std::string path, std::size_t line, std::string field,
              const std::string& what)
      : ValidationError(path + ":" + std::to_string(line) + ": field '" +
                        field + "': " + what),
        path_(std::move(path)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string path_;
  std::size_t line_;
  std::string field_;
};

// Model artifact failed its integrity check.
class CorruptModelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A contract the library guarantees was observed broken at runtime.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace normprior
