#pragma once

#include <stdexcept>
#include <string>

namespace vesselatlas {

// Invalid input: malformed documents, broken invariants, bad arguments.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure at runtime: divergence, non-finite state.
class NumericalError : public std::runtime_error {
  public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vesselatlas
