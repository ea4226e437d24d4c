#pragma once

#include <stdexcept>
#include <string>

namespace corrcast {

// Input or precondition violation. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Pearson correlation requested on a zero-variance vector.
class DegenerateCorrelation : public ValidationError {
 public:
  explicit DegenerateCorrelation(const std::string& what) : ValidationError(what) {}
};

// Failure while computing (solver did not terminate, training diverged, ...).
// The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

class NoMatchError : public RuntimeFailure {
 public:
  explicit NoMatchError(const std::string& what) : RuntimeFailure(what) {}
};

class EmptyTreeError : public RuntimeFailure {
 public:
  explicit EmptyTreeError(const std::string& what) : RuntimeFailure(what) {}
};

class DivergenceError : public RuntimeFailure {
 public:
  DivergenceError(const std::string& what, int epoch) : RuntimeFailure(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// A caller broke an ordering or state contract (e.g. unsorted encoder input).
class ContractError : public ValidationError {
 public:
  explicit ContractError(const std::string& what) : ValidationError(what) {}
};

class ParseError : public ValidationError {
 public:
  explicit ParseError(const std::string& what) : ValidationError(what) {}
};

class VersionError : public ParseError {
 public:
  explicit VersionError(const std::string& what) : ParseError(what) {}
};

}  // namespace corrcast
