#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clens {

// Bad caller input: wrong shapes, empty lists, out-of-range pixel values.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index outside the range the backend reports (e.g. an unknown layer).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// The backend or client lacks a capability the operation needs.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network / process transport failure; retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, std::size_t column, const std::string& msg)
      : std::runtime_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace clens
