#pragma once

#include <stdexcept>
#include <string>

namespace brsda {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, parameter domain violations, contract/shape
// mismatches. Maps to CLI exit code 2.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset ingestion and archive format problems. Maps to CLI exit code 3.
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite losses or other numerical failures during training.
// Maps to CLI exit code 4.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// A metric is undefined on the given inputs (e.g. AUC with one class).
struct MetricError : Error {
  explicit MetricError(const std::string& msg) : Error(msg) {}
};

}  // namespace brsda
