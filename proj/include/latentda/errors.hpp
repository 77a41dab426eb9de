#pragma once

#include <stdexcept>
#include <string>

namespace latentda {

// Invalid configuration or argument values.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent on-disk artifacts.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure (non-convergence, singular matrix, non-finite values).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimizer hit a non-finite gradient or loss.
struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(const std::string& what, int epoch_, int batch_)
      : std::runtime_error(what), epoch(epoch_), batch(batch_) {}
  int epoch = -1;
  int batch = -1;
};

}  // namespace latentda
