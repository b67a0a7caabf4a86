#ifndef RPO_CHECKS_H_
#define RPO_CHECKS_H_

#include <cstdint>
#include <string>
#include <vector>

namespace rpo {

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct GradientCheckOptions {
  int points = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
};

// Autodiff against central differences: every primitive, every env step,
// an 8-step double-integrator return, the cached rollout action-gradients
// and the LQR fixed point. One result per suite entry (max error over
// the random points).
std::vector<CheckResult> RunGradientChecks(const GradientCheckOptions& options = {});

}  // namespace rpo

#endif  // RPO_CHECKS_H_
