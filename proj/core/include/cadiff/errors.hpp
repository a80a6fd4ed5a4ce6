#pragma once

#include <stdexcept>
#include <string>

namespace cadiff {

/// Invalid configuration, precondition or argument combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite numbers are required.
class NumericInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Vector dimensions that do not agree.
class ShapeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Diffusion step or other index outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Rejection sampling of obstacle layouts gave up.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted file has the wrong magic, version, kind, or is truncated.
class IncompatibleFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading or writing a file failed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cadiff
