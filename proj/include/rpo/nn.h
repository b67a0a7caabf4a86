#ifndef RPO_NN_H_
#define RPO_NN_H_

#include <optional>
#include <string>
#include <vector>

#include "rpo/rng.h"
#include "rpo/tape.h"

namespace rpo {

struct MlpOptions {
  std::vector<int> hidden = {64, 64};
  bool layer_norm = true;
  double hidden_gain = 1.0;
  // 0 gives a zero-initialized head
  double head_gain = 1.0;
};

// name and shape of one parameter tensor, in flattening order
struct ParamInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
};

// parameter leaves of one network on one tape
struct MlpBinding {
  std::vector<NodeRef> params;
};

// Multilayer perceptron: (Linear -> LayerNorm -> SiLU) per hidden layer and
// a linear head. Weights are (out x in), biases (out x 1); inputs are
// (in x batch).
//
// Flattening order per hidden layer: weight, bias, norm gain, norm bias
// (the last two only with layer_norm); then head weight, head bias. Each
// tensor is flattened column-major.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int input_dim, int output_dim, MlpOptions options);

  // orthogonal init scaled by the configured gains; biases zero, norm gain one
  void Initialize(Rng& rng);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const MlpOptions& options() const { return options_; }
  int NumParameters() const;
  std::vector<ParamInfo> Manifest(const std::string& prefix) const;

  Vector Flatten() const;
  void Assign(const Vector& flat);

  std::vector<Matrix>& tensors() { return tensors_; }
  const std::vector<Matrix>& tensors() const { return tensors_; }

  // parameters as tape variables (requires_grad) or constants
  MlpBinding Bind(Tape& tape, bool requires_grad) const;
  NodeRef Forward(Tape& tape, const MlpBinding& binding, NodeRef input) const;
  // flat gradient of the tape's seeded objective w.r.t. the bound parameters
  Vector Gradient(const Tape& tape, const MlpBinding& binding) const;

  // plain evaluation
  Matrix Evaluate(const Matrix& input) const;

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  MlpOptions options_;
  std::vector<Matrix> tensors_;
};

struct AdamWOptions {
  double beta1 = 0.7;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// decoupled weight decay Adam with bias-corrected moments
class AdamW {
 public:
  AdamW() = default;
  AdamW(int num_params, AdamWOptions options);

  // throws NonFiniteError (leaving params and state untouched) on a
  // non-finite gradient
  void Step(Vector& params, const Vector& grads, double lr);

  const AdamWOptions& options() const { return options_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  long step() const { return step_; }

 private:
  AdamWOptions options_;
  Vector m_;
  Vector v_;
  long step_ = 0;
};

// scales grads in place when their L2 norm exceeds max_norm; returns the
// norm before clipping
double ClipGradNorm(Vector& grads, double max_norm = 0.5);

enum class ScheduleKind { kConstant, kLinear, kExponential, kKlAdaptive };

std::string ScheduleName(ScheduleKind kind);
ScheduleKind ParseSchedule(const std::string& name);

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double initial = 5e-4;
  int total_steps = 1;
  // exponential: rate at total_steps is initial * final_ratio
  double final_ratio = 0.01;
  double kl_target = 0.008;
  double kl_factor = 1.5;
  double min_rate = 1e-6;
  double max_rate = 1e-2;

  // Rate for the given step. kl-adaptive is stateful: it rescales the
  // current rate from the observed KL and returns the new rate.
  double Rate(int step, std::optional<double> observed_kl = std::nullopt);

  double current = -1.0;
};

}  // namespace rpo

#endif  // RPO_NN_H_
