#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace larar {

// Base for every error the library raises. Callers that only care about
// "something in larar failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an engine operation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Batchnorm eval mode or detection used before statistics were populated.
class CalibrationMissingError : public Error {
 public:
  using Error::Error;
};

// A leaf was mutated after the graph that reads it was recorded.
class StaleGraphError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSecondOrderError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ShapeMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class AttackError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t row)
      : DataError("row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class DegenerateCalibrationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, int epoch, std::size_t batch)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

}  // namespace larar
