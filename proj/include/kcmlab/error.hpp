#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kcmlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input does not satisfy the model definitions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& where, const std::string& what)
      : ValidationError(where.empty() ? what : where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class CapExceeded : public Error {
 public:
  CapExceeded(const std::string& what, double cardinality, std::size_t cap)
      : Error(what + ": cardinality " + format_count(cardinality) + " exceeds cap " +
              std::to_string(cap)),
        cardinality_(cardinality),
        cap_(cap) {}
  double cardinality() const noexcept { return cardinality_; }
  std::size_t cap() const noexcept { return cap_; }

 private:
  static std::string format_count(double c) {
    if (c < 1e15) return std::to_string(static_cast<long long>(c));
    return std::to_string(c);
  }
  double cardinality_;
  std::size_t cap_;
};

// A caller broke an operation's documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A checked property of the construction failed. This signals a bug in the
// implementation (or a counterexample), never bad input.
class PropertyViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace kcmlab
