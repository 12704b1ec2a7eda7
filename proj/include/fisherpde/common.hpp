#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fisherpde {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Raised when a computation cannot deliver a trustworthy number: singular
/// or ill-conditioned matrices, quadrature that does not settle, blow-up of
/// a solver. Argument errors use std::invalid_argument.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Selects the serial reference path or the OpenMP path of a kernel. Both
/// paths perform the same floating-point operations per output entry, so
/// results agree bit-for-bit unless a kernel documents otherwise.
enum class Execution { serial, parallel };

/// Worker count used by the parallel paths; 0 leaves the OpenMP default.
void set_worker_count(int workers);
int worker_count();

}  // namespace fisherpde
