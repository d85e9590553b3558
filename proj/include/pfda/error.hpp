#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace pfda {

// Invalid argument values (non-finite states, bad dimensions, bad parameters).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// The model lacks something an algorithm needs, e.g. a transition density.
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Runtime failure inside an algorithm. Carries the time step or MCMC
// iteration at which it happened once that is known.
class AlgorithmError : public std::runtime_error {
 public:
  explicit AlgorithmError(const std::string& what,
                          std::optional<std::size_t> step = std::nullopt)
      : std::runtime_error(step ? what + " (step " + std::to_string(*step) + ")"
                                : what),
        message_(what),
        step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::optional<std::size_t> step_;
};

// Every importance weight is zero: the particle approximation has failed.
class DegenerateWeightsError : public AlgorithmError {
 public:
  using AlgorithmError::AlgorithmError;
};

// Singular or indefinite matrices, non-finite integration stages.
class NumericalError : public AlgorithmError {
 public:
  using AlgorithmError::AlgorithmError;
};

// An ensemble member left the admissible range.
class DivergenceError : public AlgorithmError {
 public:
  using AlgorithmError::AlgorithmError;
};

// Attach a step index to an algorithm error that does not have one yet.
template <class E>
[[noreturn]] void rethrow_at_step(const E& e, std::size_t step) {
  if (e.step()) throw e;
  throw E(e.message(), step);
}

}  // namespace pfda
