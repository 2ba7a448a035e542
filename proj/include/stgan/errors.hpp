#pragma once

#include <stdexcept>
#include <string>

namespace stgan {

// Shape or rank violations in tensor ops and layers.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf detected at a checked boundary.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, training or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Binary-mask arguments containing values other than 0 and 1.
class NonBinaryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Phantom generation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system or stream failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. Subclasses distinguish the failure kind.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class BadMaxvalError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NonBinaryMaskError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NameMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace stgan
