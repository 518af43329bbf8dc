#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lspi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SymmetryError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class PositivityError : public Error {
 public:
  using Error::Error;
};

/// A matrix required to be stable has spectral radius >= 1 - 1e-9.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

/// The Riccati iteration did not converge within its cap.
class NonStabilizableError : public Error {
 public:
  using Error::Error;
};

class ConditioningError : public Error {
 public:
  using Error::Error;
};

class IdentifiabilityError : public Error {
 public:
  using Error::Error;
};

/// The simulated state norm crossed the divergence threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, double state_norm, std::string context = {})
      : Error("state diverged at step " + std::to_string(step) +
              " (|x| = " + std::to_string(state_norm) + ")" +
              (context.empty() ? std::string{} : " during " + context)),
        step_(step),
        state_norm_(state_norm),
        context_(std::move(context)) {}

  std::int64_t step() const noexcept { return step_; }
  double state_norm() const noexcept { return state_norm_; }
  const std::string& context() const noexcept { return context_; }

 private:
  std::int64_t step_;
  double state_norm_;
  std::string context_;
};

/// Configuration validation failure; names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(key) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace lspi
