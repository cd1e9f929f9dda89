#pragma once

#include <stdexcept>
#include <string>

namespace skd {

// Malformed inputs: non-Hermitian matrices, bad labels, inconsistent shapes.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk container problems (bad magic, truncation, dimension mismatch).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (s not divisible by p, missing paths, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cholesky failure, NaN/Inf in activations, diverging loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// L < q and similar parameter-domain violations.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace skd
