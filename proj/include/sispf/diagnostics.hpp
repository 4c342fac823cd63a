#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sispf {

// One named check: pass iff value < threshold.
struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Finite-difference verification of every tape op, the Cholesky backward
// rule, the proposal moments, and the full unrolled loss on a toy filter
// (N=2, M=2, T=2, K=3). Every check's value is a max relative error with
// threshold 1e-4.
std::vector<CheckResult> run_gradcheck_suite(std::uint64_t seed = 1);

// Fast property battery: ESS bounds, resampling weight reset, the constant
// per-step weight increment under the minimum-degeneracy proposal, the loss
// upper bound and its attainment, a closed-form Kalman step, and filter
// determinism.
std::vector<CheckResult> run_selftest_suite(std::uint64_t seed = 1);

}  // namespace sispf
