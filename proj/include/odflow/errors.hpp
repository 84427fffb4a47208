#pragma once

#include <stdexcept>
#include <string>

namespace odflow {

// Parse failures carry a 1-based line number when one is known.
class parse_error : public std::runtime_error {
 public:
  explicit parse_error(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Declared counts/totals do not match the data actually present.
class integrity_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates a domain rule.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: bad shapes, backward on a non-scalar, and the like.
class contract_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace odflow
