#pragma once

#include <stdexcept>
#include <string>

namespace dail {

// Error taxonomy shared by every module. All derive from std::runtime_error or
// std::logic_error so callers can catch broadly; the CLI maps them to exit 1.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownInstruction : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct EpisodeFinished : std::logic_error {
  using std::logic_error::logic_error;
};

struct NoPath : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateEmbedding : std::domain_error {
  using std::domain_error::domain_error;
};

struct NoNegatives : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dail
