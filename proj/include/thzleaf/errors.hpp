#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace thzleaf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad sizes, out-of-range arguments).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its content does not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Configuration file or override problem, anchored to a source line when known.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  explicit ConfigError(const std::string& what) : Error(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Numerical breakdown: NaN/Inf activations, singular systems, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Failure inside a named pipeline stage.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace thzleaf
