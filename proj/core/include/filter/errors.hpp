#pragma once

#include <stdexcept>
#include <string>

namespace filter {

// Error categories map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Anything else is a plain bug and exits 1.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations between tensors. These indicate misuse of the
// library rather than bad user input.
struct ShapeError : std::logic_error {
  explicit ShapeError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace filter
