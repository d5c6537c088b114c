#pragma once

#include <stdexcept>
#include <string>

namespace socnn {

// Base type for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer dimension disagreements.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid argument values (out-of-range hyperparameters, bad modes, ...).
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// A name was looked up in a ParamStore and not found.
class MissingParameterError : public Error {
 public:
  explicit MissingParameterError(const std::string& msg) : Error(msg) {}
};

// Configuration file / run configuration violations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failures (missing file, unwritable path).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Malformed text input; carries a 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line = 0) : Error(format(msg, line)), line_(line) {}
  int line() const { return line_; }

 private:
  static std::string format(const std::string& msg, int line) {
    if (line <= 0) return msg;
    return msg + " (line " + std::to_string(line) + ")";
  }
  int line_ = 0;
};

// Checkpoint container problems: bad magic, version, corruption.
class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

}  // namespace socnn
