// Common numeric aliases and error types shared by every semired header.
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace semired {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a loss is evaluated outside its domain (e.g. a nonpositive
/// Poisson mean). Carries the offending component index.
class DomainError : public std::domain_error {
 public:
  DomainError(const std::string& what, Index index)
      : std::domain_error(what + " (component " + std::to_string(index) + ")"),
        index_(index) {}

  Index index() const noexcept { return index_; }

 private:
  Index index_;
};

/// A factorization hit a zero (or numerically zero) pivot.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// CG or Cholesky encountered a non-positive curvature direction.
class IndefiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested path needs a capability the model does not provide.
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace semired
