#pragma once

#include <stdexcept>
#include <string>

namespace mtcs {

// Raised when an iteration or a linear-algebra step leaves the finite range
// or otherwise cannot continue. Distinct from std::invalid_argument, which
// marks contract violations in the inputs; the command-line driver maps the
// two onto different exit codes.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mtcs
