#ifndef JETFLOW_ERRORS_HPP
#define JETFLOW_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace jetflow {

struct JetflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: syntax, unknown symbols, malformed config. CLI exit code 2.
struct InputError : JetflowError {
  using JetflowError::JetflowError;
};

struct ParseError : InputError {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : InputError("parse error at byte " + std::to_string(off) + ": " + msg), offset(off) {}
};

struct UnknownSymbol : InputError {
  std::string name;
  std::size_t offset;
  UnknownSymbol(const std::string& n, std::size_t off)
      : InputError("unknown symbol '" + n + "' at byte " + std::to_string(off)), name(n), offset(off) {}
};

// Evaluation outside the chart domain (log/sqrt of nonpositive, division by zero).
struct DomainError : JetflowError {
  using JetflowError::JetflowError;
};

// A structural hypothesis failed numerically (constant rank, regular matrices, ...).
// CLI exit code 3.
struct AssumptionFailure : JetflowError {
  std::string kind;
  AssumptionFailure(const std::string& k, const std::string& detail)
      : JetflowError(k + ": " + detail), kind(k) {}
};

}  // namespace jetflow

#endif
