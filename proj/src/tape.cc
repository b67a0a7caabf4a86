#include "rpo/tape.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rpo {
namespace {

std::string ShapeString(NodeRef n) {
  return "(" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + ")";
}

[[noreturn]] void ShapeError(Op op, std::span<const NodeRef> parents) {
  std::ostringstream msg;
  msg << "tape: shape mismatch for " << OpName(op) << ":";
  for (const NodeRef& p : parents) msg << " " << ShapeString(p);
  throw std::invalid_argument(msg.str());
}

bool Broadcastable(int a, int b) { return a == b || a == 1 || b == 1; }

// replicate a size-1 dimension up to (rows, cols)
Matrix Expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// m itself when it already has the shape, else an expanded copy in scratch
const Matrix& ExpandRef(const Matrix& m, Eigen::Index rows, Eigen::Index cols, Matrix& scratch) {
  if (m.rows() == rows && m.cols() == cols) return m;
  scratch = m.replicate(rows / m.rows(), cols / m.cols());
  return scratch;
}

// sum out broadcast dimensions so the gradient matches (rows, cols)
Matrix ReduceTo(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix r = g;
  if (rows == 1 && r.rows() != 1) r = r.colwise().sum().eval();
  if (cols == 1 && r.cols() != 1) r = r.rowwise().sum().eval();
  return r;
}

// vectorized logistic; exp(-x) overflowing to inf still gives 0
Matrix SigmoidOf(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }


}  // namespace

std::string_view OpName(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kTanh: return "tanh";
    case Op::kAtanh: return "atanh";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kClamp: return "clamp";
    case Op::kNormalize: return "normalize";
    case Op::kSilu: return "silu";
    case Op::kSoftplus: return "softplus";
    case Op::kSum: return "sum";
    case Op::kScale: return "scale";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
  }
  return "unknown";
}

NodeRef Tape::Push(Node node, Matrix value) {
  if (swept()) throw std::logic_error("tape: recording after the reverse sweep");
  const int rows = static_cast<int>(value.rows());
  const int cols = static_cast<int>(value.cols());
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  adjoints_.emplace_back();
  return {static_cast<int>(nodes_.size()) - 1, rows, cols};
}

NodeRef Tape::Variable(Matrix value) {
  Node node;
  node.requires_grad = true;
  return Push(std::move(node), std::move(value));
}

NodeRef Tape::Constant(Matrix value) { return Push(Node{}, std::move(value)); }

void Tape::Watch(NodeRef node) {
  CheckRef(node);
  nodes_[node.index].requires_grad = true;
}

void Tape::CheckRef(NodeRef node) const {
  if (node.index < 0 || node.index >= size()) {
    throw std::out_of_range("tape: invalid node index " + std::to_string(node.index));
  }
  const Matrix& v = values_[node.index];
  if (v.rows() != node.rows || v.cols() != node.cols) {
    throw std::invalid_argument("tape: stale node reference " + std::to_string(node.index));
  }
}

NodeRef Tape::Clamp(NodeRef x, double lo, double hi) {
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return Record(Op::kClamp, std::span(&x, 1), attrs);
}

NodeRef Tape::Normalize(NodeRef x, double eps) {
  OpAttrs attrs;
  attrs.eps = eps;
  return Record(Op::kNormalize, std::span(&x, 1), attrs);
}

NodeRef Tape::Sum(NodeRef x, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return Record(Op::kSum, std::span(&x, 1), attrs);
}

NodeRef Tape::Scale(NodeRef x, double factor) {
  OpAttrs attrs;
  attrs.factor = factor;
  return Record(Op::kScale, std::span(&x, 1), attrs);
}

NodeRef Tape::Concat(std::span<const NodeRef> parts, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return Record(Op::kConcat, parts, attrs);
}

NodeRef Tape::Slice(NodeRef x, int offset, int count, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.offset = offset;
  attrs.count = count;
  return Record(Op::kSlice, std::span(&x, 1), attrs);
}

NodeRef Tape::Record(Op op, std::span<const NodeRef> parents, const OpAttrs& attrs) {
  for (const NodeRef& p : parents) CheckRef(p);

  auto arity = [&](std::size_t n) {
    if (parents.size() != n) {
      throw std::invalid_argument("tape: " + std::string(OpName(op)) + " expects " +
                                  std::to_string(n) + " parents");
    }
  };

  Node node;
  node.op = op;
  node.attrs = attrs;
  for (const NodeRef& p : parents) {
    node.parents.push_back(p.index);
    node.requires_grad = node.requires_grad || nodes_[p.index].requires_grad;
  }

  Matrix out;
  switch (op) {
    case Op::kLeaf:
      throw std::invalid_argument("tape: use Variable or Constant for leaves");
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      arity(2);
      const NodeRef a = parents[0], b = parents[1];
      if (!Broadcastable(a.rows, b.rows) || !Broadcastable(a.cols, b.cols)) {
        ShapeError(op, parents);
      }
      const Eigen::Index rows = std::max(a.rows, b.rows);
      const Eigen::Index cols = std::max(a.cols, b.cols);
      Matrix xs, ys;
      const Matrix& x = ExpandRef(values_[a.index], rows, cols, xs);
      const Matrix& y = ExpandRef(values_[b.index], rows, cols, ys);
      if (op == Op::kAdd) out = x + y;
      if (op == Op::kSub) out = x - y;
      if (op == Op::kMul) out = x.cwiseProduct(y);
      break;
    }
    case Op::kMatMul: {
      arity(2);
      if (parents[0].cols != parents[1].rows) ShapeError(op, parents);
      out = values_[parents[0].index] * values_[parents[1].index];
      break;
    }
    case Op::kTanh:
    case Op::kAtanh:
    case Op::kSin:
    case Op::kCos:
    case Op::kExp:
    case Op::kLog:
    case Op::kSquare:
    case Op::kSilu:
    case Op::kSoftplus:
    case Op::kClamp: {
      arity(1);
      const Matrix& x = values_[parents[0].index];
      switch (op) {
        case Op::kTanh: out = x.array().tanh(); break;
        case Op::kAtanh: out = x.unaryExpr([](double v) { return std::atanh(v); }); break;
        case Op::kSin: out = x.array().sin(); break;
        case Op::kCos: out = x.array().cos(); break;
        case Op::kExp: out = x.array().exp(); break;
        case Op::kLog: out = x.array().log(); break;
        case Op::kSquare: out = x.array().square(); break;
        case Op::kSilu: out = x.cwiseProduct(SigmoidOf(x)); break;
        case Op::kSoftplus:
          out = (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
          break;
        case Op::kClamp:
          if (attrs.lo > attrs.hi) {
            throw std::invalid_argument("tape: clamp with lo > hi");
          }
          out = x.cwiseMax(attrs.lo).cwiseMin(attrs.hi);
          break;
        default: break;
      }
      break;
    }
    case Op::kNormalize: {
      arity(1);
      const Matrix& x = values_[parents[0].index];
      if (x.rows() < 2) ShapeError(op, parents);
      out.resize(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().mean();
        out.col(j) = (x.col(j).array() - mean) / std::sqrt(var + attrs.eps);
      }
      break;
    }
    case Op::kSum: {
      arity(1);
      const Matrix& x = values_[parents[0].index];
      if (attrs.axis == -1) {
        out = Matrix::Constant(1, 1, x.sum());
      } else if (attrs.axis == 0) {
        out = x.colwise().sum();
      } else if (attrs.axis == 1) {
        out = x.rowwise().sum();
      } else {
        throw std::invalid_argument("tape: sum axis must be -1, 0 or 1");
      }
      break;
    }
    case Op::kScale: {
      arity(1);
      out = attrs.factor * values_[parents[0].index];
      break;
    }
    case Op::kConcat: {
      if (parents.empty()) throw std::invalid_argument("tape: concat of nothing");
      if (attrs.axis != 0 && attrs.axis != 1) {
        throw std::invalid_argument("tape: concat axis must be 0 or 1");
      }
      Eigen::Index rows = 0, cols = 0;
      for (const NodeRef& p : parents) {
        if (attrs.axis == 0) {
          if (p.cols != parents[0].cols) ShapeError(op, parents);
          rows += p.rows;
          cols = p.cols;
        } else {
          if (p.rows != parents[0].rows) ShapeError(op, parents);
          cols += p.cols;
          rows = p.rows;
        }
      }
      out.resize(rows, cols);
      Eigen::Index at = 0;
      for (const NodeRef& p : parents) {
        if (attrs.axis == 0) {
          out.middleRows(at, p.rows) = values_[p.index];
          at += p.rows;
        } else {
          out.middleCols(at, p.cols) = values_[p.index];
          at += p.cols;
        }
      }
      break;
    }
    case Op::kSlice: {
      arity(1);
      const NodeRef x = parents[0];
      const int extent = attrs.axis == 0 ? x.rows : x.cols;
      if ((attrs.axis != 0 && attrs.axis != 1) || attrs.offset < 0 || attrs.count <= 0 ||
          attrs.offset + attrs.count > extent) {
        throw std::invalid_argument("tape: slice [" + std::to_string(attrs.offset) + ", +" +
                                    std::to_string(attrs.count) + ") out of range for " +
                                    ShapeString(x));
      }
      if (attrs.axis == 0) {
        out = values_[x.index].middleRows(attrs.offset, attrs.count);
      } else {
        out = values_[x.index].middleCols(attrs.offset, attrs.count);
      }
      break;
    }
  }
  return Push(std::move(node), std::move(out));
}

const Matrix& Tape::Value(NodeRef node) const {
  CheckRef(node);
  return values_[node.index];
}

double Tape::ScalarValue(NodeRef node) const {
  const Matrix& v = Value(node);
  if (v.size() != 1) throw std::invalid_argument("tape: node is not a scalar");
  return v(0, 0);
}

Matrix Tape::Adjoint(NodeRef node) const {
  CheckRef(node);
  const Matrix& a = adjoints_[node.index];
  if (a.size() == 0) return Matrix::Zero(node.rows, node.cols);
  return a;
}

std::optional<int> Tape::FirstNonFinite() const {
  for (int i = 0; i < size(); ++i) {
    if (!values_[i].allFinite()) return i;
  }
  return std::nullopt;
}

template <class Expr>
void Tape::Accumulate(int index, const Expr& grad) {
  if (!nodes_[index].requires_grad) return;
  Matrix& a = adjoints_[index];
  if (a.size() == 0) {
    a = grad;
  } else {
    a += grad;
  }
}

void Tape::Backward(NodeRef scalar_output) {
  CheckRef(scalar_output);
  if (scalar_output.rows != 1 || scalar_output.cols != 1) {
    throw std::invalid_argument("tape: Backward(node) needs a scalar; pass explicit seeds");
  }
  const std::pair<NodeRef, Matrix> seed{scalar_output, Matrix::Ones(1, 1)};
  Backward(std::span(&seed, 1));
}

void Tape::Backward(std::span<const std::pair<NodeRef, Matrix>> seeds) {
  if (nodes_.empty()) throw std::logic_error("tape: backward on an unevaluated tape");
  if (swept()) throw std::logic_error("tape: already swept; record a new tape");
  int last = -1;
  for (const auto& [node, seed] : seeds) {
    CheckRef(node);
    if (seed.rows() != node.rows || seed.cols() != node.cols) {
      throw std::invalid_argument("tape: seed shape does not match node " +
                                  std::to_string(node.index));
    }
    Matrix& a = adjoints_[node.index];
    if (a.size() == 0) {
      a = seed;
    } else {
      a += seed;
    }
    last = std::max(last, node.index);
  }
  ++sweeps_;
  for (int i = last; i >= 0; --i) {
    if (nodes_[i].op == Op::kLeaf || !nodes_[i].requires_grad) continue;
    if (adjoints_[i].size() == 0) continue;
    Propagate(i);
  }
}

void Tape::Propagate(int index) {
  const Node& node = nodes_[index];
  const Matrix& g = adjoints_[index];
  const Matrix& y = values_[index];
  const auto& p = node.parents;

  switch (node.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd:
    case Op::kSub: {
      for (int k = 0; k < 2; ++k) {
        const Matrix& x = values_[p[k]];
        if (!nodes_[p[k]].requires_grad) continue;
        const bool negate = node.op == Op::kSub && k == 1;
        if (x.rows() == g.rows() && x.cols() == g.cols()) {
          if (negate) {
            Accumulate(p[k], -g);
          } else {
            Accumulate(p[k], g);
          }
        } else {
          const Matrix r = ReduceTo(g, x.rows(), x.cols());
          if (negate) {
            Accumulate(p[k], -r);
          } else {
            Accumulate(p[k], r);
          }
        }
      }
      break;
    }
    case Op::kMul: {
      const Matrix& a = values_[p[0]];
      const Matrix& b = values_[p[1]];
      Matrix scratch;
      if (nodes_[p[0]].requires_grad) {
        const Matrix& other = ExpandRef(b, g.rows(), g.cols(), scratch);
        if (a.rows() == g.rows() && a.cols() == g.cols()) {
          Accumulate(p[0], g.cwiseProduct(other));
        } else {
          Accumulate(p[0], ReduceTo(g.cwiseProduct(other), a.rows(), a.cols()));
        }
      }
      if (nodes_[p[1]].requires_grad) {
        const Matrix& other = ExpandRef(a, g.rows(), g.cols(), scratch);
        if (b.rows() == g.rows() && b.cols() == g.cols()) {
          Accumulate(p[1], g.cwiseProduct(other));
        } else {
          Accumulate(p[1], ReduceTo(g.cwiseProduct(other), b.rows(), b.cols()));
        }
      }
      break;
    }
    case Op::kMatMul: {
      if (nodes_[p[0]].requires_grad) Accumulate(p[0], g * values_[p[1]].transpose());
      if (nodes_[p[1]].requires_grad) Accumulate(p[1], values_[p[0]].transpose() * g);
      break;
    }
    case Op::kTanh:
      Accumulate(p[0], (g.array() * (1.0 - y.array().square())).matrix());
      break;
    case Op::kAtanh:
      Accumulate(p[0], (g.array() / (1.0 - values_[p[0]].array().square())).matrix());
      break;
    case Op::kSin:
      Accumulate(p[0], (g.array() * values_[p[0]].array().cos()).matrix());
      break;
    case Op::kCos:
      Accumulate(p[0], (-(g.array() * values_[p[0]].array().sin())).matrix());
      break;
    case Op::kExp:
      Accumulate(p[0], g.cwiseProduct(y));
      break;
    case Op::kLog:
      Accumulate(p[0], (g.array() / values_[p[0]].array()).matrix());
      break;
    case Op::kSquare:
      Accumulate(p[0], 2.0 * g.cwiseProduct(values_[p[0]]));
      break;
    case Op::kClamp: {
      const double lo = node.attrs.lo, hi = node.attrs.hi;
      const Matrix mask = values_[p[0]].unaryExpr(
          [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
      Accumulate(p[0], g.cwiseProduct(mask));
      break;
    }
    case Op::kNormalize: {
      const Matrix& x = values_[p[0]];
      Matrix dx(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + node.attrs.eps);
        const double g_mean = g.col(j).mean();
        const double gy_mean = g.col(j).dot(y.col(j)) / static_cast<double>(x.rows());
        dx.col(j) = inv * (g.col(j).array() - g_mean - y.col(j).array() * gy_mean);
      }
      Accumulate(p[0], dx);
      break;
    }
    case Op::kSilu: {
      if (!nodes_[p[0]].requires_grad) break;
      const Matrix& x = values_[p[0]];
      const Matrix s = SigmoidOf(x);
      Accumulate(p[0],
                 (g.array() * s.array() * (1.0 + x.array() * (1.0 - s.array()))).matrix());
      break;
    }
    case Op::kSoftplus:
      if (!nodes_[p[0]].requires_grad) break;
      Accumulate(p[0], g.cwiseProduct(SigmoidOf(values_[p[0]])));
      break;
    case Op::kSum: {
      const Matrix& x = values_[p[0]];
      Accumulate(p[0], Expand(g, x.rows(), x.cols()));
      break;
    }
    case Op::kScale:
      Accumulate(p[0], node.attrs.factor * g);
      break;
    case Op::kConcat: {
      Eigen::Index at = 0;
      for (int parent : p) {
        const Matrix& x = values_[parent];
        if (node.attrs.axis == 0) {
          Accumulate(parent, g.middleRows(at, x.rows()));
          at += x.rows();
        } else {
          Accumulate(parent, g.middleCols(at, x.cols()));
          at += x.cols();
        }
      }
      break;
    }
    case Op::kSlice: {
      const Matrix& x = values_[p[0]];
      Matrix full = Matrix::Zero(x.rows(), x.cols());
      if (node.attrs.axis == 0) {
        full.middleRows(node.attrs.offset, node.attrs.count) = g;
      } else {
        full.middleCols(node.attrs.offset, node.attrs.count) = g;
      }
      Accumulate(p[0], full);
      break;
    }
  }
}

GradCheckResult GradCheck(const GraphFn& f, const std::vector<Matrix>& inputs, double h) {
  auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape tape;
    std::vector<NodeRef> refs;
    for (const Matrix& v : values) refs.push_back(tape.Constant(v));
    const NodeRef out = f(tape, refs);
    if (auto bad = tape.FirstNonFinite()) {
      throw NonFiniteError("grad_check: non-finite value at node " + std::to_string(*bad) +
                           " while probing");
    }
    return tape.ScalarValue(out);
  };

  Tape tape;
  std::vector<NodeRef> refs;
  for (const Matrix& v : inputs) refs.push_back(tape.Variable(v));
  const NodeRef out = f(tape, refs);
  if (auto bad = tape.FirstNonFinite()) {
    throw NonFiniteError("grad_check: non-finite value at node " + std::to_string(*bad));
  }
  if (out.rows != 1 || out.cols != 1) {
    throw std::invalid_argument("grad_check: graph output must be scalar");
  }
  tape.Backward(out);

  Eigen::Index total = 0;
  for (const Matrix& v : inputs) total += v.size();
  GradCheckResult result;
  result.autodiff.resize(total);
  result.finite_difference.resize(total);

  std::vector<Matrix> probe = inputs;
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix adj = tape.Adjoint(refs[i]);
    for (Eigen::Index e = 0; e < inputs[i].size(); ++e, ++k) {
      const double x0 = inputs[i](e);
      probe[i](e) = x0 + h;
      const double up = evaluate(probe);
      probe[i](e) = x0 - h;
      const double down = evaluate(probe);
      probe[i](e) = x0;
      const double fd = (up - down) / (2.0 * h);
      result.autodiff(k) = adj(e);
      result.finite_difference(k) = fd;
      const double err = std::abs(adj(e) - fd) / std::max(1.0, std::abs(fd));
      result.max_relative_error = std::max(result.max_relative_error, err);
    }
  }
  return result;
}

}  // namespace rpo
