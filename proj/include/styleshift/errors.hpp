#pragma once

#include <stdexcept>
#include <string>

namespace styleshift {

// Bad arguments, shape mismatches, malformed files or configs.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses or otherwise failed iterative optimization. Carries the
// iteration index at which the failure was detected.
class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& msg, long iteration)
      : std::runtime_error(msg + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

// Divergence during model training. last_checkpoint() points at the most
// recent good checkpoint directory, if one was written.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& msg, std::string last_checkpoint = {})
      : std::runtime_error(msg), last_checkpoint_(std::move(last_checkpoint)) {}
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::string last_checkpoint_;
};

// File system / serialization failures.
class PersistenceError : public std::runtime_error {
 public:
  explicit PersistenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace styleshift
