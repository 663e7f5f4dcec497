#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtm {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A matrix, vector or parameter block had the wrong extent.
class DimensionError : public Error {
public:
  DimensionError(const std::string& what_dim, std::size_t expected, std::size_t actual)
      : Error(what_dim + ": expected " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

private:
  std::size_t expected_;
  std::size_t actual_;
};

/// A NaN or infinity showed up. `index()` is the layer (forward pass),
/// inner step (adaptation) or observation the value came from.
class NonFiniteError : public Error {
public:
  NonFiniteError(const std::string& context, long index)
      : Error("non-finite value in " + context + " at index " + std::to_string(index)),
        index_(index) {}

  long index() const noexcept { return index_; }

private:
  long index_;
};

/// Malformed or inconsistent dataset, manifest or episode request.
class DataError : public Error {
public:
  using Error::Error;
};

/// Invalid run, optimizer or model configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace mtm
