#ifndef AFL_VERIFY_H_
#define AFL_VERIFY_H_

// Self-check suite behind `afl verify`: formula oracles, gradient checks,
// the second-order penalty gradient, detachment and weighting identities,
// topology oracles, and a mutation check that a broken derivative is caught.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "afl/autograd.h"

namespace afl {

struct CheckResult {
  std::string name;
  bool passed = false;
  // Observed versus expected values.
  std::string detail;
  double seconds = 0.0;
};

struct VerifyCheck {
  std::string name;
  std::function<CheckResult()> run;
};

std::vector<VerifyCheck> verify_checks();

// Runs every check, printing one line per check to `log` if given.
std::vector<CheckResult> run_verify(std::ostream* log);

// Sigmoid whose backward rule is off by a factor (1 + 1e-2): a fixture for
// the mutation check.
Var corrupted_sigmoid(const Var& x);

}  // namespace afl

#endif  // AFL_VERIFY_H_
