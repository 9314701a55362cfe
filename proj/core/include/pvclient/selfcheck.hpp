#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pvclient/layers.hpp"
#include "pvclient/tensor.hpp"

namespace pvclient::check {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[index]" of the largest error
  std::size_t checked = 0;
};

// Relative error of one gradient entry: |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

// Central differences of loss() with respect to every entry of params
// (at most max_entries per tensor, spread evenly).
GradCheckResult gradient_check(const std::function<ad::Tensor()>& loss,
                               const layers::ParamList& params, double step = 1e-5,
                               std::size_t max_entries = std::numeric_limits<std::size_t>::max());

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfcheckReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  bool passed() const;
};

// Gradient checks, RevIN round trip, attention row sums, channel permutation
// equivariance and checkpoint round trip. Progress lines go to log.
SelfcheckReport run_selfcheck(std::ostream& log, std::uint64_t seed = 42);

}  // namespace pvclient::check
