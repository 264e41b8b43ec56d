#pragma once

#include <stdexcept>
#include <string>

namespace kpat {

// Error categories map one-to-one onto the C API status codes and CLI exit codes.
enum class ErrorKind {
  kInternal = 1,
  kValidation = 2,
  kDivergence = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Tensor shapes that do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kValidation, "shape error: " + what) {}
};

// Parameter outside its documented range.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what)
      : Error(ErrorKind::kValidation, "parameter error: " + what) {}
};

// Input violates an operation precondition.
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error(ErrorKind::kValidation, "precondition error: " + what) {}
};

// Malformed serialized data; the message names the array and position.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kValidation, "format error: " + what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what)
      : Error(ErrorKind::kDivergence, "divergence: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, "io error: " + what) {}
};

}  // namespace kpat
