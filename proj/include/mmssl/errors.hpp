#pragma once

#include <stdexcept>
#include <string>

namespace mmssl {

/// Shapes or extents that do not fit together.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an op (e.g. log of 0).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Inputs that are valid in shape but numerically degenerate (zero-norm rows,
/// all-padding sequences).
struct DegenerateInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. backward from a non-scalar or touching a frozen parameter.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct PairingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct NoNegativesError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct StratificationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed record in a text file; carries the 1-based line number.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Wrong header, version, or checksum.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite training loss.
struct DivergenceError : std::runtime_error {
  DivergenceError(std::size_t epoch, std::size_t batch)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace mmssl
