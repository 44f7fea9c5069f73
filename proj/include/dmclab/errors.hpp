#pragma once

#include <stdexcept>
#include <string>

namespace dmclab {

// Bad arguments to a constructor or operation (out-of-range probability,
// zero sizes, start state outside the chain, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A structural property check failed; the message names the violated
// property (row stochasticity, symmetry, irreducibility, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run configuration is internally inconsistent (size mismatches, stepsize
// assertions, schedule/mode conflicts). Raised before any step executes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The requested quantity has no implemented closed form for these inputs.
struct UnsupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An iterative solver hit its iteration cap before reaching tolerance.
struct ConvergenceError : std::runtime_error {
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (achieved residual " + std::to_string(residual) + ")"),
        achieved_residual(residual) {}
  double achieved_residual;
};

}  // namespace dmclab
