#pragma once

#include <stdexcept>
#include <string>

namespace nhflux {

// invalid physical or numerical parameter passed to a builder or engine
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// quadrature non-convergence, NaN in a propagation, singular fit, ...
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// path-sum enumeration would exceed the configured path-pair budget
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// schema or usage problem in an experiment config; path is the dotted key
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace nhflux
