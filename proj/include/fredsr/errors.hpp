#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fredsr {

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reduction axis outside [0, rank).
class AxisError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// log/sqrt of a negative value while strict domain checking is enabled.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Image stream could not be parsed. `offset` is the byte position where
/// decoding stopped.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Image is too small for the requested operation.
class TooSmall : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace fredsr
