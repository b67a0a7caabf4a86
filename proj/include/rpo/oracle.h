#ifndef RPO_ORACLE_H_
#define RPO_ORACLE_H_

#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "rpo/envs.h"
#include "rpo/policy.h"
#include "rpo/rollout.h"
#include "rpo/tape.h"

namespace rpo {

// ----- LQR ----- //

struct LqrSolution {
  Matrix P;  // discounted cost-to-go, cost = sum_t gamma^t (s'Qs + a'Ra)
  Matrix K;  // optimal feedback a = -K s
  int iterations = 0;
  double residual = 0.0;

  // optimal discounted return from s0 under the reward sign convention
  double Value(const Vector& s0) const { return -s0.dot(P * s0); }
};

class LqrDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iterates the discounted Riccati recursion
//   P <- Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA
// to its fixed point. Throws LqrDivergence when it has not converged after
// max_iterations or stops being finite.
LqrSolution LqrSolve(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     double gamma, int max_iterations = 100000);

// || P - (Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA) ||_max
double RiccatiResidual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                       double gamma, const Matrix& P);

// ----- finite differences ----- //

using ScalarFn = std::function<double(const Vector&)>;

// central differences of f at x
Vector FiniteDifference(const ScalarFn& f, const Vector& x, double h = 1e-6);

// ----- surrogate-gradient quadrature ----- //

// A scalar linear-head squashed normal policy written out by hand:
//   mean = w_mu s + b_mu, log_std = clamp(w_sigma s + b_sigma)
//   a = scale tanh(mean + std eps) + offset    (or mean + std eps unsquashed)
// theta is ordered (w_mu, w_sigma, b_mu, b_sigma), the flat order of a
// policy network without hidden layers.
struct ScalarPolicyModel {
  Vector theta = Vector::Zero(4);
  double scale = 1.0;
  double offset = 0.0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  bool squash = true;

  double Mean(double s) const;
  double LogStd(double s) const;
  bool LogStdClamped(double s) const;
  double Action(double s, double eps) const;
  // d action / d theta at fixed noise
  Vector ActionGrad(double s, double eps) const;
  // d action / d state at fixed noise
  double ActionStateGrad(double s, double eps) const;
};

// the model of a 1-D policy network without hidden layers
ScalarPolicyModel ModelOf(const SquashedNormalPolicy& policy);

// policy network without hidden layers for a 1-D env, with flat params theta
SquashedNormalPolicy MakeLinearPolicy(const DiffEnv& env, const Vector& theta);

struct QuadratureOptions {
  double bound = 6.0;  // noise integrated over [-bound, bound]
  int initial_points = 129;
  int max_points = 16385;
  double tolerance = 1e-8;
};

struct QuadratureEstimate {
  Vector gradient;
  int points = 0;        // grid size per noise dimension
  double bound = 6.0;
  double change = 0.0;   // max change at the last refinement
  bool converged = false;
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// integral over the new policy's noise of d_theta a_new . d_a Q_old(s, a_new),
// discounted per step and averaged over the old policy's state distribution.
// Refines the trapezoid grid (n -> 2n - 1) until two levels agree to the
// tolerance; throws QuadratureError otherwise.
QuadratureEstimate BanditSurrogateGrad(const BanditParams& env, const ScalarPolicyModel& old_policy,
                                       const ScalarPolicyModel& new_policy,
                                       const QuadratureOptions& options = {});
QuadratureEstimate ChainSurrogateGrad(const ChainParams& env, const ScalarPolicyModel& old_policy,
                                      const ScalarPolicyModel& new_policy, double gamma,
                                      const QuadratureOptions& options = {});
// dispatches on the env type (bandit or chain only)
QuadratureEstimate SurrogateGradTrue(const DiffEnv& env, const SquashedNormalPolicy& old_policy,
                                     const SquashedNormalPolicy& new_policy, double gamma,
                                     const QuadratureOptions& options = {});

// ----- estimator lab ----- //

struct LabOptions {
  int samples = 100000;
  int batch_size = 1000;
  double gamma = 0.99;
  std::uint64_t seed = 0;
};

struct EstimatorStats {
  std::string name;
  Vector mean;
  Vector standard_error;
  // (mean - truth) / standard_error per component
  Vector deviation;
  // per-sample variance per component
  Vector variance;
  double max_abs_deviation = 0.0;
};

struct LabReport {
  std::string env;
  int samples = 0;
  int batches = 0;
  QuadratureEstimate truth_on_policy;
  QuadratureEstimate truth_off_policy;
  EstimatorStats on_policy;   // cached action-gradients, old = new
  EstimatorStats off_policy;  // rho-weighted regenerated actions, no gate
  EstimatorStats reinforce;   // rho-weighted score function
  double ratio_min = 0.0;
  double ratio_max = 0.0;

  nlohmann::json ToJson() const;
};

// Runs the three estimators over samples rollouts (batched for standard
// errors) collected with old_policy; new_policy is the candidate.
LabReport EstimatorLab(const DiffEnv& env, const SquashedNormalPolicy& old_policy,
                       const SquashedNormalPolicy& new_policy, const LabOptions& options);

// per-trajectory score-function estimate of the same surrogate gradient:
// mean over envs of sum_t rho_t gamma^t G_t d log pi_new(a_t|s_t)
Vector ReinforceGradient(const RolloutBuffer& buffer, const SquashedNormalPolicy& policy,
                         double gamma, Matrix* ratios = nullptr);

}  // namespace rpo

#endif  // RPO_ORACLE_H_
