#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcb {

// Violated precondition on an argument (sizes, ranges, labels).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or corrupted file content.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, non-PD matrices and similar numeric breakdowns.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A feature vector the guard cannot map into range (zero norm under unit guard).
struct DegenerateFeature : std::domain_error {
  using std::domain_error::domain_error;
};

struct TrainingError : NumericError {
  TrainingError(const std::string& what, std::size_t epoch)
      : NumericError(what + " (epoch " + std::to_string(epoch) + ")"), epoch(epoch) {}
  std::size_t epoch;
};

}  // namespace pcb
