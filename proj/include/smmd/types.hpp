#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace smmd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Malformed arguments: bad dimensions, invalid parameters, unparsable input.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numerical procedure failed (singular system after jitter, solver stall).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smmd
