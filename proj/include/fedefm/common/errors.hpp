#pragma once

#include <stdexcept>
#include <string>

namespace fedefm {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or key; `what()` names the key path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad caller input (infeasible marginals, empty dataset, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during evaluation.
class NumericError : public Error {
 public:
  NumericError(const std::string& msg, std::string layer)
      : Error(msg), layer_(std::move(layer)) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

/// Interior-point solver failed to reach the requested KKT residual.
class SolverError : public Error {
 public:
  SolverError(const std::string& msg, double residual)
      : Error(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// KKT matrix singular even after ridge regularization.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Federation protocol violation (bad neighbor, empty silo, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable persisted file (checkpoint, manifest, metrics).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedefm
