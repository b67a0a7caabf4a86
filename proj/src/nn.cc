#include "rpo/nn.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rpo {
namespace {

Matrix Orthogonal(int rows, int cols, double gain, Rng& rng) {
  if (gain == 0.0) return Matrix::Zero(rows, cols);
  const bool wide = rows < cols;
  const int r = wide ? cols : rows;
  const int c = wide ? rows : cols;
  const Matrix g = rng.Normal(r, c);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(r, c);
  const Matrix upper = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j) {
    if (upper(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  Matrix w = wide ? Matrix(q.transpose()) : q;
  return gain * w;
}

}  // namespace

Mlp::Mlp(int input_dim, int output_dim, MlpOptions options)
    : input_dim_(input_dim), output_dim_(output_dim), options_(std::move(options)) {
  if (input_dim <= 0 || output_dim <= 0) {
    throw std::invalid_argument("mlp: dimensions must be positive");
  }
  int in = input_dim;
  for (int width : options_.hidden) {
    if (width <= 0) throw std::invalid_argument("mlp: hidden width must be positive");
    tensors_.push_back(Matrix::Zero(width, in));
    tensors_.push_back(Matrix::Zero(width, 1));
    if (options_.layer_norm) {
      tensors_.push_back(Matrix::Ones(width, 1));
      tensors_.push_back(Matrix::Zero(width, 1));
    }
    in = width;
  }
  tensors_.push_back(Matrix::Zero(output_dim, in));
  tensors_.push_back(Matrix::Zero(output_dim, 1));
}

void Mlp::Initialize(Rng& rng) {
  const int per_layer = options_.layer_norm ? 4 : 2;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < options_.hidden.size(); ++layer, k += per_layer) {
    Matrix& w = tensors_[k];
    w = Orthogonal(static_cast<int>(w.rows()), static_cast<int>(w.cols()),
                   options_.hidden_gain, rng);
    tensors_[k + 1].setZero();
    if (options_.layer_norm) {
      tensors_[k + 2].setOnes();
      tensors_[k + 3].setZero();
    }
  }
  Matrix& head = tensors_[k];
  head = Orthogonal(static_cast<int>(head.rows()), static_cast<int>(head.cols()),
                    options_.head_gain, rng);
  tensors_[k + 1].setZero();
}

int Mlp::NumParameters() const {
  int n = 0;
  for (const Matrix& t : tensors_) n += static_cast<int>(t.size());
  return n;
}

std::vector<ParamInfo> Mlp::Manifest(const std::string& prefix) const {
  std::vector<ParamInfo> out;
  const int per_layer = options_.layer_norm ? 4 : 2;
  const char* kLayerNames[] = {"weight", "bias", "norm_gain", "norm_bias"};
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const bool head = i + 2 >= tensors_.size();
    std::string name;
    if (head) {
      name = prefix + "head." + (i + 2 == tensors_.size() ? "weight" : "bias");
    } else {
      name = prefix + "layer" + std::to_string(i / per_layer) + "." +
             kLayerNames[i % per_layer];
    }
    out.push_back({name, static_cast<int>(tensors_[i].rows()),
                   static_cast<int>(tensors_[i].cols())});
  }
  return out;
}

Vector Mlp::Flatten() const {
  Vector flat(NumParameters());
  Eigen::Index at = 0;
  for (const Matrix& t : tensors_) {
    flat.segment(at, t.size()) = t.reshaped();
    at += t.size();
  }
  return flat;
}

void Mlp::Assign(const Vector& flat) {
  if (flat.size() != NumParameters()) {
    throw std::invalid_argument("mlp: flat parameter size " + std::to_string(flat.size()) +
                                " != " + std::to_string(NumParameters()));
  }
  Eigen::Index at = 0;
  for (Matrix& t : tensors_) {
    t.reshaped() = flat.segment(at, t.size());
    at += t.size();
  }
}

MlpBinding Mlp::Bind(Tape& tape, bool requires_grad) const {
  MlpBinding binding;
  binding.params.reserve(tensors_.size());
  for (const Matrix& t : tensors_) {
    binding.params.push_back(requires_grad ? tape.Variable(t) : tape.Constant(t));
  }
  return binding;
}

NodeRef Mlp::Forward(Tape& tape, const MlpBinding& binding, NodeRef input) const {
  if (input.rows != input_dim_) {
    throw std::invalid_argument("mlp: input has " + std::to_string(input.rows) +
                                " rows, expected " + std::to_string(input_dim_));
  }
  if (binding.params.size() != tensors_.size()) {
    throw std::invalid_argument("mlp: binding does not match network");
  }
  const int per_layer = options_.layer_norm ? 4 : 2;
  NodeRef x = input;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < options_.hidden.size(); ++layer, k += per_layer) {
    x = tape.Add(tape.MatMul(binding.params[k], x), binding.params[k + 1]);
    if (options_.layer_norm) {
      x = tape.Normalize(x);
      x = tape.Add(tape.Mul(x, binding.params[k + 2]), binding.params[k + 3]);
    }
    x = tape.Silu(x);
  }
  return tape.Add(tape.MatMul(binding.params[k], x), binding.params[k + 1]);
}

Vector Mlp::Gradient(const Tape& tape, const MlpBinding& binding) const {
  Vector flat(NumParameters());
  Eigen::Index at = 0;
  for (const NodeRef& p : binding.params) {
    const Matrix g = tape.Adjoint(p);
    flat.segment(at, g.size()) = g.reshaped();
    at += g.size();
  }
  return flat;
}

Matrix Mlp::Evaluate(const Matrix& input) const {
  Tape tape;
  const MlpBinding binding = Bind(tape, false);
  return tape.Value(Forward(tape, binding, tape.Constant(input)));
}

AdamW::AdamW(int num_params, AdamWOptions options)
    : options_(options), m_(Vector::Zero(num_params)), v_(Vector::Zero(num_params)) {}

void AdamW::Step(Vector& params, const Vector& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("adamw: parameter/gradient size mismatch");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (!grads.allFinite()) throw NonFiniteError("adamw: non-finite gradient, update rejected");

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * grads;
  v_ = b2 * v_ + (1.0 - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  params *= 1.0 - lr * options_.weight_decay;
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + options_.eps);
}

double ClipGradNorm(Vector& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  const double norm = grads.norm();
  if (norm > max_norm) grads *= max_norm / norm;
  return norm;
}

std::string ScheduleName(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kExponential: return "exponential";
    case ScheduleKind::kKlAdaptive: return "kl_adaptive";
  }
  return "constant";
}

ScheduleKind ParseSchedule(const std::string& name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "exponential") return ScheduleKind::kExponential;
  if (name == "kl_adaptive" || name == "kl") return ScheduleKind::kKlAdaptive;
  throw std::invalid_argument("unknown lr schedule '" + name + "'");
}

double LrSchedule::Rate(int step, std::optional<double> observed_kl) {
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("lr schedule: step " + std::to_string(step) +
                                " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double frac = total_steps > 0 ? static_cast<double>(step) / total_steps : 0.0;
  switch (kind) {
    case ScheduleKind::kConstant:
      return initial;
    case ScheduleKind::kLinear:
      return initial * (1.0 - frac);
    case ScheduleKind::kExponential:
      return initial * std::pow(final_ratio, frac);
    case ScheduleKind::kKlAdaptive: {
      if (!observed_kl) {
        throw std::invalid_argument("lr schedule: kl_adaptive needs an observed KL");
      }
      if (current <= 0.0) current = initial;
      if (*observed_kl > 2.0 * kl_target) {
        current = std::max(min_rate, current / kl_factor);
      } else if (*observed_kl < 0.5 * kl_target) {
        current = std::min(max_rate, current * kl_factor);
      }
      return current;
    }
  }
  return initial;
}

}  // namespace rpo
