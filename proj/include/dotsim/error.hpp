#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dotsim {

// Malformed input text. line is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// An index outside its declared range.
class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Input that parses but violates an invariant (duplicates, bad shapes, infeasible sampling).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dotsim
