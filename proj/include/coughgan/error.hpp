#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coughgan {

/// Base of every error the library throws. Each subclass maps onto one CLI
/// exit code (see cli::exit_code_for).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller-supplied configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is inconsistent (labels out of range, vocabulary mismatch, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of the operation.
class DomainError : public DataError {
 public:
  using DataError::DataError;
};

/// Tensor shapes do not compose.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// A byte stream or text file does not follow its declared format.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Manifest is missing a mandatory column.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

/// A manifest data row failed to parse. `row()` is the 1-based data row.
class RowError : public DataError {
 public:
  RowError(std::size_t row, const std::string& what)
      : DataError("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// API misuse, e.g. a backward call with a cache from another layer.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace coughgan
