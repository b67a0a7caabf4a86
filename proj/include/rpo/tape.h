#ifndef RPO_TAPE_H_
#define RPO_TAPE_H_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rpo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// raised whenever a computation produces NaN or infinity
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kTanh,
  kAtanh,
  kSin,
  kCos,
  kExp,
  kLog,
  kSquare,
  kClamp,
  kNormalize,
  kSilu,
  kSoftplus,
  kSum,
  kScale,
  kConcat,
  kSlice,
};

std::string_view OpName(Op op);

// handle to a value recorded on a tape
struct NodeRef {
  int index = -1;
  int rows = 0;
  int cols = 0;

  bool valid() const { return index >= 0; }
};

// per-primitive attributes; unused fields are ignored
struct OpAttrs {
  double lo = 0.0;      // clamp
  double hi = 0.0;      // clamp
  double factor = 1.0;  // scale
  double eps = 1e-5;    // normalize
  int axis = -1;        // sum: -1 all, 0 rows, 1 cols; concat/slice: 0 or 1
  int offset = 0;       // slice
  int count = 0;        // slice
};

// Reverse-mode tape. Values are computed eagerly when a primitive is
// recorded; one reverse sweep per recording fills the adjoints.
//
// Shapes are (rows, cols). Columns are batch entries by convention.
// Binary elementwise primitives broadcast a dimension of size 1.
class Tape {
 public:
  Tape() = default;

  // differentiable input
  NodeRef Variable(Matrix value);
  // input that receives no adjoint
  NodeRef Constant(Matrix value);
  NodeRef Scalar(double value) { return Constant(Matrix::Constant(1, 1, value)); }
  // request an adjoint for a node whose inputs are all constants; must be
  // called before anything downstream of it is recorded
  void Watch(NodeRef node);

  NodeRef Record(Op op, std::span<const NodeRef> parents, const OpAttrs& attrs = {});

  NodeRef Add(NodeRef a, NodeRef b) { return Binary(Op::kAdd, a, b); }
  NodeRef Sub(NodeRef a, NodeRef b) { return Binary(Op::kSub, a, b); }
  NodeRef Mul(NodeRef a, NodeRef b) { return Binary(Op::kMul, a, b); }
  NodeRef MatMul(NodeRef a, NodeRef b) { return Binary(Op::kMatMul, a, b); }
  NodeRef Tanh(NodeRef x) { return Unary(Op::kTanh, x); }
  NodeRef Atanh(NodeRef x) { return Unary(Op::kAtanh, x); }
  NodeRef Sin(NodeRef x) { return Unary(Op::kSin, x); }
  NodeRef Cos(NodeRef x) { return Unary(Op::kCos, x); }
  NodeRef Exp(NodeRef x) { return Unary(Op::kExp, x); }
  NodeRef Log(NodeRef x) { return Unary(Op::kLog, x); }
  NodeRef Square(NodeRef x) { return Unary(Op::kSquare, x); }
  NodeRef Silu(NodeRef x) { return Unary(Op::kSilu, x); }
  NodeRef Softplus(NodeRef x) { return Unary(Op::kSoftplus, x); }
  NodeRef Clamp(NodeRef x, double lo, double hi);
  // per-column zero-mean, unit-variance normalization (LayerNorm without affine)
  NodeRef Normalize(NodeRef x, double eps = 1e-5);
  NodeRef Sum(NodeRef x, int axis = -1);
  NodeRef Scale(NodeRef x, double factor);
  NodeRef Concat(std::span<const NodeRef> parts, int axis = 0);
  NodeRef Slice(NodeRef x, int offset, int count, int axis = 0);

  // the reference is invalidated by recording further nodes
  const Matrix& Value(NodeRef node) const;
  double ScalarValue(NodeRef node) const;

  // Accumulates d(sum_i <seed_i, value_i>)/d(node) into every adjoint.
  // Throws if the tape is empty, already swept, or seeds are malformed.
  void Backward(std::span<const std::pair<NodeRef, Matrix>> seeds);
  void Backward(NodeRef scalar_output);

  // zero matrix of the node's shape when nothing flowed into it
  Matrix Adjoint(NodeRef node) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  int sweeps() const { return sweeps_; }
  bool swept() const { return sweeps_ > 0; }

  // index of the first node holding a NaN or infinity
  std::optional<int> FirstNonFinite() const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<int> parents;
    OpAttrs attrs;
    bool requires_grad = false;
  };

  NodeRef Unary(Op op, NodeRef x) { return Record(op, std::span(&x, 1)); }
  NodeRef Binary(Op op, NodeRef a, NodeRef b) {
    const NodeRef parents[2] = {a, b};
    return Record(op, parents);
  }
  NodeRef Push(Node node, Matrix value);
  void CheckRef(NodeRef node) const;
  void Propagate(int index);
  template <class Expr>
  void Accumulate(int index, const Expr& grad);

  std::vector<Node> nodes_;
  std::vector<Matrix> values_;
  std::vector<Matrix> adjoints_;
  int sweeps_ = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  Vector autodiff;
  Vector finite_difference;
};

// Builds a scalar graph from the given inputs.
using GraphFn = std::function<NodeRef(Tape&, std::span<const NodeRef>)>;

// Compares the reverse sweep against central differences with step h.
// Error per entry: |autodiff - fd| / max(1, |fd|). Throws NonFiniteError
// naming the first offending node when the forward pass is not finite.
GradCheckResult GradCheck(const GraphFn& f, const std::vector<Matrix>& inputs,
                          double h = 1e-6);

}  // namespace rpo

#endif  // RPO_TAPE_H_
