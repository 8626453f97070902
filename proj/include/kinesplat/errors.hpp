#pragma once

#include <stdexcept>
#include <string>

namespace kinesplat {

/// Base of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text or header input. Messages name the offending line.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Splat file whose property list matches no supported SH degree.
class UnsupportedLayoutError : public Error {
 public:
  using Error::Error;
};

/// Splat body shorter than the header promises.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class BindingError : public Error {
 public:
  using Error::Error;
};

/// Linear block is not a uniformly scaled rotation.
class DecompositionError : public Error {
 public:
  using Error::Error;
};

/// Non-positive ratio, reflection, or non-rotation input.
class InvalidTransformError : public Error {
 public:
  using Error::Error;
};

class MergeError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class JobError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace kinesplat
