#pragma once

#include <string>

namespace smmd {

// Runs the built-in oracle and invariant battery (finite differences against
// analytic derivatives, brute-force estimator oracles, closed-form references,
// solver KKT checks, bound and ordering properties). Returns the number of
// failed checks; name_filter selects checks by substring. Slow checks (long
// trajectory and training runs) only run when include_slow is set.
int run_selftest(const std::string& name_filter, bool verbose, bool include_slow);

}  // namespace smmd
