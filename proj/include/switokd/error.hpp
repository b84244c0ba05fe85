#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace switokd {

/// Tensor or distribution dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the operation's mathematical domain (tau <= 0, empty batch, ...).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Both teacher and student are exactly on the label, so r = 0/0.
class DegenerateInputError : public DomainError {
public:
  using DomainError::DomainError;
};

/// Non-finite value encountered in a loss, gradient or parameter.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training aborted; carries the iteration at which it happened.
class TrainingAborted : public NumericError {
public:
  TrainingAborted(std::size_t iteration, const std::string& what)
      : NumericError("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

private:
  std::size_t iteration_;
};

/// Malformed input file. Carries the byte offset or line number that failed.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::size_t position)
      : std::runtime_error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

/// Invalid run configuration. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field.empty() ? what : field + ": " + what),
        field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

} // namespace switokd
