// SPDX-License-Identifier: Apache-2.0

#include "role_forge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

namespace role_forge::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::string two_shapes(const char* what, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << what << ": shape mismatch " << a.str() << " vs " << b.str();
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape / Tensor

Shape::Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const int> dims) {
  if (dims.empty() || dims.size() > static_cast<std::size_t>(kMaxRank))
    throw ShapeError("shape rank must be in [1, 4], got " + std::to_string(dims.size()));
  rank_ = static_cast<int>(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] <= 0) throw ShapeError("shape dimensions must be positive");
    dims_[i] = dims[i];
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[static_cast<std::size_t>(i)]);
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (int i = 0; i < rank_; ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[static_cast<std::size_t>(i)]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.numel())
    throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " + shape.str());
}

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kMatMul: return "matmul";
    case Primitive::kAddBias: return "add_bias";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kDiv: return "div";
    case Primitive::kAffine: return "affine";
    case Primitive::kRelu: return "relu";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kTanh: return "tanh";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSquare: return "square";
    case Primitive::kSqrt: return "sqrt";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kSumCols: return "sum_cols";
    case Primitive::kConcatCols: return "concat_cols";
    case Primitive::kConcatRows: return "concat_rows";
    case Primitive::kSliceCols: return "slice_cols";
    case Primitive::kSliceRows: return "slice_rows";
    case Primitive::kGatherRows: return "gather_rows";
    case Primitive::kSelectCols: return "select_cols";
    case Primitive::kMaxCols: return "max_cols";
    case Primitive::kMinScalar: return "min_scalar";
    case Primitive::kClampMin: return "clamp_min";
    case Primitive::kAbs: return "abs";
    case Primitive::kFrobeniusNorm: return "frobenius_norm";
    case Primitive::kRowNorm: return "row_norm";
    case Primitive::kRowMatVec: return "row_matvec";
    case Primitive::kReshape: return "reshape";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var

const Shape& Var::shape() const { return tape_->shape(*this); }
const std::vector<double>& Var::value() const { return tape_->value(*this); }
const std::vector<double>& Var::grad() const { return tape_->grad(*this); }
double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape().str());
  return v[0];
}

Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape()->div(a, b); }

// ---------------------------------------------------------------------------
// Tape bookkeeping

int Tape::check(Var v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size())
    throw std::invalid_argument("variable does not belong to this tape");
  return v.id();
}

const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(check(v))]; }
Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(check(v))]; }

const std::vector<double>& Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? empty_ : n.grad;
}

Var Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<double>& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::leaf(const Tensor& t, bool requires_grad) {
  Node n;
  n.shape = t.shape;
  n.value = t.data;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::leaf(Tensor&& t, bool requires_grad) {
  Node n;
  n.shape = t.shape;
  n.value = std::move(t.data);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::detach(Var x) {
  Node n;
  n.shape = node(x).shape;
  n.value = node(x).value;
  return push(std::move(n));
}

void Tape::zero_grad() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Forward primitives

Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.shape.rank() != 2 || nb.shape.rank() != 2 || na.shape[1] != nb.shape[0])
    throw ShapeError(two_shapes("matmul", na.shape, nb.shape));
  const int m = na.shape[0], k = na.shape[1], p = nb.shape[1];
  Node n;
  n.op = Primitive::kMatMul;
  n.shape = Shape{m, p};
  n.value.assign(static_cast<std::size_t>(m) * static_cast<std::size_t>(p), 0.0);
  MutMap(n.value.data(), m, p).noalias() = ConstMap(na.value.data(), m, k) * ConstMap(nb.value.data(), k, p);
  n.a = a.id();
  n.b = b.id();
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::add_bias(Var x, Var bias) {
  const Node& nx = node(x);
  const Node& nb = node(bias);
  if (nb.shape.rank() != 1 || nb.shape[0] != nx.shape.cols())
    throw ShapeError(two_shapes("add_bias", nx.shape, nb.shape));
  Node n;
  n.op = Primitive::kAddBias;
  n.shape = nx.shape;
  n.value = nx.value;
  const std::size_t cols = static_cast<std::size_t>(nx.shape.cols());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += nb.value[i % cols];
  n.a = x.id();
  n.b = bias.id();
  n.requires_grad = nx.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::binary_same_shape(Primitive op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (!(na.shape == nb.shape)) throw ShapeError(two_shapes(primitive_name(op), na.shape, nb.shape));
  Node n;
  n.op = op;
  n.shape = na.shape;
  n.value.resize(na.value.size());
  const double* x = na.value.data();
  const double* y = nb.value.data();
  double* out = n.value.data();
  const std::size_t sz = n.value.size();
  switch (op) {
    case Primitive::kAdd:
      for (std::size_t i = 0; i < sz; ++i) out[i] = x[i] + y[i];
      break;
    case Primitive::kSub:
      for (std::size_t i = 0; i < sz; ++i) out[i] = x[i] - y[i];
      break;
    case Primitive::kMul:
      for (std::size_t i = 0; i < sz; ++i) out[i] = x[i] * y[i];
      break;
    case Primitive::kDiv:
      for (std::size_t i = 0; i < sz; ++i) {
        if (y[i] == 0.0) throw DomainError("div: division by zero at element " + std::to_string(i));
        out[i] = x[i] / y[i];
      }
      break;
    default:
      throw std::logic_error("binary_same_shape: unsupported primitive");
  }
  n.a = a.id();
  n.b = b.id();
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary_same_shape(Primitive::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return binary_same_shape(Primitive::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return binary_same_shape(Primitive::kMul, a, b); }
Var Tape::div(Var a, Var b) { return binary_same_shape(Primitive::kDiv, a, b); }

Var Tape::unary(Primitive op, Var x, double c0, double c1) {
  const Node& nx = node(x);
  Node n;
  n.op = op;
  n.shape = nx.shape;
  n.c0 = c0;
  n.c1 = c1;
  n.value.resize(nx.value.size());
  const double* in = nx.value.data();
  double* out = n.value.data();
  const std::size_t sz = n.value.size();
  switch (op) {
    case Primitive::kAffine:
      for (std::size_t i = 0; i < sz; ++i) out[i] = c0 * in[i] + c1;
      break;
    case Primitive::kRelu:
      for (std::size_t i = 0; i < sz; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Primitive::kSigmoid:
      for (std::size_t i = 0; i < sz; ++i) {
        // Split by sign so exp never overflows.
        if (in[i] >= 0.0) {
          out[i] = 1.0 / (1.0 + std::exp(-in[i]));
        } else {
          const double e = std::exp(in[i]);
          out[i] = e / (1.0 + e);
        }
      }
      break;
    case Primitive::kTanh:
      for (std::size_t i = 0; i < sz; ++i) out[i] = std::tanh(in[i]);
      break;
    case Primitive::kExp:
      for (std::size_t i = 0; i < sz; ++i) out[i] = std::exp(in[i]);
      break;
    case Primitive::kLog:
      for (std::size_t i = 0; i < sz; ++i) {
        if (!(in[i] > 0.0))
          throw DomainError("log: non-positive input " + std::to_string(in[i]) + " at element " + std::to_string(i));
        out[i] = std::log(in[i]);
      }
      break;
    case Primitive::kSquare:
      for (std::size_t i = 0; i < sz; ++i) out[i] = in[i] * in[i];
      break;
    case Primitive::kSqrt:
      for (std::size_t i = 0; i < sz; ++i) {
        if (!(in[i] > 0.0))
          throw DomainError("sqrt: non-positive input " + std::to_string(in[i]) + " at element " + std::to_string(i));
        out[i] = std::sqrt(in[i]);
      }
      break;
    case Primitive::kMinScalar:
      for (std::size_t i = 0; i < sz; ++i) out[i] = in[i] <= c0 ? in[i] : c0;
      break;
    case Primitive::kClampMin:
      for (std::size_t i = 0; i < sz; ++i) out[i] = in[i] >= c0 ? in[i] : c0;
      break;
    case Primitive::kAbs:
      for (std::size_t i = 0; i < sz; ++i) out[i] = std::fabs(in[i]);
      break;
    default:
      throw std::logic_error("unary: unsupported primitive");
  }
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::affine(Var x, double scale, double shift) { return unary(Primitive::kAffine, x, scale, shift); }
Var Tape::relu(Var x) { return unary(Primitive::kRelu, x); }
Var Tape::sigmoid(Var x) { return unary(Primitive::kSigmoid, x); }
Var Tape::tanh(Var x) { return unary(Primitive::kTanh, x); }
Var Tape::exp(Var x) { return unary(Primitive::kExp, x); }
Var Tape::log(Var x) { return unary(Primitive::kLog, x); }
Var Tape::square(Var x) { return unary(Primitive::kSquare, x); }
Var Tape::sqrt(Var x) { return unary(Primitive::kSqrt, x); }
Var Tape::min_scalar(Var x, double c) { return unary(Primitive::kMinScalar, x, c); }
Var Tape::clamp_min(Var x, double c) { return unary(Primitive::kClampMin, x, c); }
Var Tape::abs(Var x) { return unary(Primitive::kAbs, x); }

Var Tape::sum(Var x) {
  const Node& nx = node(x);
  Node n;
  n.op = Primitive::kSum;
  n.shape = Shape{1};
  n.value = {std::accumulate(nx.value.begin(), nx.value.end(), 0.0)};
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::mean(Var x) {
  const Node& nx = node(x);
  Node n;
  n.op = Primitive::kMean;
  n.shape = Shape{1};
  n.value = {std::accumulate(nx.value.begin(), nx.value.end(), 0.0) / static_cast<double>(nx.value.size())};
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::sum_cols(Var x) {
  const Node& nx = node(x);
  const int rows = nx.shape.rows(), cols = nx.shape.cols();
  Node n;
  n.op = Primitive::kSumCols;
  n.shape = Shape{rows, 1};
  n.value.assign(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* row = nx.value.data() + static_cast<std::ptrdiff_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += row[c];
    n.value[static_cast<std::size_t>(r)] = s;
  }
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int rows = node(parts[0]).shape.rows();
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    const Node& np = node(p);
    if (np.shape.rank() != 2 || np.shape.rows() != rows)
      throw ShapeError(two_shapes("concat_cols", node(parts[0]).shape, np.shape));
    total += np.shape.cols();
    rg = rg || np.requires_grad;
  }
  Node n;
  n.op = Primitive::kConcatCols;
  n.shape = Shape{rows, total};
  n.value.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(total));
  int offset = 0;
  for (Var p : parts) {
    const Node& np = node(p);
    const int c = np.shape.cols();
    for (int r = 0; r < rows; ++r)
      std::copy_n(np.value.data() + static_cast<std::ptrdiff_t>(r) * c, c,
                  n.value.data() + static_cast<std::ptrdiff_t>(r) * total + offset);
    offset += c;
    n.inputs.push_back(p.id());
  }
  n.requires_grad = rg;
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int cols = node(parts[0]).shape.cols();
  int rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const Node& np = node(p);
    if (np.shape.rank() != 2 || np.shape.cols() != cols)
      throw ShapeError(two_shapes("concat_rows", node(parts[0]).shape, np.shape));
    rows += np.shape.rows();
    rg = rg || np.requires_grad;
  }
  Node n;
  n.op = Primitive::kConcatRows;
  n.shape = Shape{rows, cols};
  n.value.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (Var p : parts) {
    const Node& np = node(p);
    n.value.insert(n.value.end(), np.value.begin(), np.value.end());
    n.inputs.push_back(p.id());
  }
  n.requires_grad = rg;
  return push(std::move(n));
}

Var Tape::slice_cols(Var x, int begin, int end) {
  const Node& nx = node(x);
  if (nx.shape.rank() != 2 || begin < 0 || end > nx.shape.cols() || begin >= end)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     nx.shape.str());
  const int rows = nx.shape.rows(), cols = nx.shape.cols(), w = end - begin;
  Node n;
  n.op = Primitive::kSliceCols;
  n.shape = Shape{rows, w};
  n.value.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(w));
  for (int r = 0; r < rows; ++r)
    std::copy_n(nx.value.data() + static_cast<std::ptrdiff_t>(r) * cols + begin, w,
                n.value.data() + static_cast<std::ptrdiff_t>(r) * w);
  n.a = x.id();
  n.c0 = begin;
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::slice_rows(Var x, int begin, int end) {
  const Node& nx = node(x);
  if (nx.shape.rank() != 2 || begin < 0 || end > nx.shape.rows() || begin >= end)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     nx.shape.str());
  const int cols = nx.shape.cols();
  Node n;
  n.op = Primitive::kSliceRows;
  n.shape = Shape{end - begin, cols};
  n.value.assign(nx.value.begin() + static_cast<std::ptrdiff_t>(begin) * cols,
                 nx.value.begin() + static_cast<std::ptrdiff_t>(end) * cols);
  n.a = x.id();
  n.c0 = begin;
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::gather_rows(Var x, std::vector<int> index) {
  const Node& nx = node(x);
  if (nx.shape.rank() != 2 || index.empty()) throw ShapeError("gather_rows: expects a matrix and a non-empty index");
  const int rows = nx.shape.rows(), cols = nx.shape.cols();
  Node n;
  n.op = Primitive::kGatherRows;
  n.shape = Shape{static_cast<int>(index.size()), cols};
  n.value.resize(index.size() * static_cast<std::size_t>(cols));
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= rows)
      throw ShapeError("gather_rows: row " + std::to_string(index[k]) + " out of range for " + nx.shape.str());
    std::copy_n(nx.value.data() + static_cast<std::ptrdiff_t>(index[k]) * cols, cols,
                n.value.data() + static_cast<std::ptrdiff_t>(k) * cols);
  }
  n.a = x.id();
  n.index = std::move(index);
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::select_cols(Var x, std::vector<int> index) {
  const Node& nx = node(x);
  const int rows = nx.shape.rows(), cols = nx.shape.cols();
  if (static_cast<int>(index.size()) != rows)
    throw ShapeError("select_cols: " + std::to_string(index.size()) + " indices for " + nx.shape.str());
  Node n;
  n.op = Primitive::kSelectCols;
  n.shape = Shape{rows, 1};
  n.value.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const int c = index[static_cast<std::size_t>(r)];
    if (c < 0 || c >= cols) throw ShapeError("select_cols: column " + std::to_string(c) + " out of range");
    n.value[static_cast<std::size_t>(r)] = nx.value[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
  }
  n.a = x.id();
  n.index = std::move(index);
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::max_cols(Var x) {
  const Node& nx = node(x);
  const int rows = nx.shape.rows(), cols = nx.shape.cols();
  Node n;
  n.op = Primitive::kMaxCols;
  n.shape = Shape{rows, 1};
  n.value.resize(static_cast<std::size_t>(rows));
  n.index.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* row = nx.value.data() + static_cast<std::ptrdiff_t>(r) * cols;
    int best = 0;
    for (int c = 1; c < cols; ++c)
      if (row[c] > row[best]) best = c;
    n.value[static_cast<std::size_t>(r)] = row[best];
    n.index[static_cast<std::size_t>(r)] = best;
  }
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::frobenius_norm(Var x) {
  const Node& nx = node(x);
  double s = 0.0;
  for (double v : nx.value) s += v * v;
  Node n;
  n.op = Primitive::kFrobeniusNorm;
  n.shape = Shape{1};
  n.value = {std::sqrt(s)};
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::row_norm(Var x) {
  const Node& nx = node(x);
  const int rows = nx.shape.rows(), cols = nx.shape.cols();
  Node n;
  n.op = Primitive::kRowNorm;
  n.shape = Shape{rows, 1};
  n.value.resize(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* row = nx.value.data() + static_cast<std::ptrdiff_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += row[c] * row[c];
    n.value[static_cast<std::size_t>(r)] = std::sqrt(s);
  }
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

Var Tape::row_matvec(Var x, Var w) {
  const Node& nx = node(x);
  const Node& nw = node(w);
  const int rows = nx.shape.rows(), k = nx.shape.cols();
  if (nx.shape.rank() != 2 || nw.shape.rank() != 2 || nw.shape.rows() != rows || nw.shape.cols() % k != 0)
    throw ShapeError(two_shapes("row_matvec", nx.shape, nw.shape));
  const int m = nw.shape.cols() / k;
  Node n;
  n.op = Primitive::kRowMatVec;
  n.shape = Shape{rows, m};
  n.value.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(m), 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* xr = nx.value.data() + static_cast<std::ptrdiff_t>(r) * k;
    const double* wr = nw.value.data() + static_cast<std::ptrdiff_t>(r) * k * m;
    double* out = n.value.data() + static_cast<std::ptrdiff_t>(r) * m;
    for (int i = 0; i < k; ++i) {
      const double xi = xr[i];
      const double* wi = wr + static_cast<std::ptrdiff_t>(i) * m;
      for (int a = 0; a < m; ++a) out[a] += xi * wi[a];
    }
  }
  n.a = x.id();
  n.b = w.id();
  n.requires_grad = nx.requires_grad || nw.requires_grad;
  return push(std::move(n));
}

Var Tape::reshape(Var x, Shape shape) {
  const Node& nx = node(x);
  if (shape.numel() != nx.shape.numel()) throw ShapeError(two_shapes("reshape", nx.shape, shape));
  Node n;
  n.op = Primitive::kReshape;
  n.shape = shape;
  n.value = nx.value;
  n.a = x.id();
  n.requires_grad = nx.requires_grad;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss) {
  const int id = check(loss);
  if (!nodes_[static_cast<std::size_t>(id)].shape.is_scalar())
    throw ShapeError("backward: loss must be scalar, got " + nodes_[static_cast<std::size_t>(id)].shape.str());
  grad_slot(id)[0] += 1.0;
  for (int i = id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Primitive::kLeaf || !n.requires_grad || n.grad.empty()) continue;
    backprop_node(i);
  }
}

void Tape::backprop_node(int id) {
  // Copies of the scalars we need; grad_slot() may reallocate other nodes' grad vectors only.
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::vector<double>& g = n.grad;
  const std::size_t sz = g.size();
  auto wants = [&](int input) { return input >= 0 && nodes_[static_cast<std::size_t>(input)].requires_grad; };

  switch (n.op) {
    case Primitive::kLeaf:
      return;
    case Primitive::kMatMul: {
      const Node& na = nodes_[static_cast<std::size_t>(n.a)];
      const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      const int m = na.shape[0], k = na.shape[1], p = nb.shape[1];
      ConstMap G(g.data(), m, p);
      if (wants(n.a)) MutMap(grad_slot(n.a).data(), m, k).noalias() += G * ConstMap(nb.value.data(), k, p).transpose();
      if (wants(n.b)) MutMap(grad_slot(n.b).data(), k, p).noalias() += ConstMap(na.value.data(), m, k).transpose() * G;
      return;
    }
    case Primitive::kAddBias: {
      if (wants(n.a)) {
        auto& ga = grad_slot(n.a);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_slot(n.b);
        const std::size_t cols = gb.size();
        for (std::size_t i = 0; i < sz; ++i) gb[i % cols] += g[i];
      }
      return;
    }
    case Primitive::kAdd:
    case Primitive::kSub: {
      if (wants(n.a)) {
        auto& ga = grad_slot(n.a);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_slot(n.b);
        const double s = n.op == Primitive::kAdd ? 1.0 : -1.0;
        for (std::size_t i = 0; i < sz; ++i) gb[i] += s * g[i];
      }
      return;
    }
    case Primitive::kMul: {
      const auto& va = nodes_[static_cast<std::size_t>(n.a)].value;
      const auto& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      if (wants(n.a)) {
        auto& ga = grad_slot(n.a);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * vb[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_slot(n.b);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * va[i];
      }
      return;
    }
    case Primitive::kDiv: {
      const auto& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      if (wants(n.a)) {
        auto& ga = grad_slot(n.a);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / vb[i];
      }
      if (wants(n.b)) {
        auto& gb = grad_slot(n.b);
        for (std::size_t i = 0; i < sz; ++i) gb[i] -= g[i] * n.value[i] / vb[i];
      }
      return;
    }
    default:
      break;
  }

  // Remaining primitives have a single differentiable input `a`, except the
  // variadic concatenations and row_matvec which check their inputs themselves.
  if (!wants(n.a) && n.inputs.empty() && n.op != Primitive::kRowMatVec) return;

  switch (n.op) {
    case Primitive::kAffine: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += n.c0 * g[i];
      return;
    }
    case Primitive::kRelu: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i)
        if (x[i] > 0.0) ga[i] += g[i];
      return;
    }
    case Primitive::kSigmoid: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      return;
    }
    case Primitive::kTanh: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      return;
    }
    case Primitive::kExp: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * n.value[i];
      return;
    }
    case Primitive::kLog: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / x[i];
      return;
    }
    case Primitive::kSquare: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i) ga[i] += 2.0 * g[i] * x[i];
      return;
    }
    case Primitive::kSqrt: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += 0.5 * g[i] / n.value[i];
      return;
    }
    case Primitive::kSum: {
      auto& ga = grad_slot(n.a);
      for (double& v : ga) v += g[0];
      return;
    }
    case Primitive::kMean: {
      auto& ga = grad_slot(n.a);
      const double s = g[0] / static_cast<double>(ga.size());
      for (double& v : ga) v += s;
      return;
    }
    case Primitive::kSumCols: {
      auto& ga = grad_slot(n.a);
      const std::size_t cols = ga.size() / sz;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / cols];
      return;
    }
    case Primitive::kConcatCols: {
      const int rows = n.shape.rows(), total = n.shape.cols();
      int offset = 0;
      for (int in : n.inputs) {
        const int c = nodes_[static_cast<std::size_t>(in)].shape.cols();
        if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
          auto& gi = grad_slot(in);
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j)
              gi[static_cast<std::size_t>(r) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] +=
                  g[static_cast<std::size_t>(r) * static_cast<std::size_t>(total) + static_cast<std::size_t>(offset + j)];
        }
        offset += c;
      }
      return;
    }
    case Primitive::kConcatRows: {
      std::size_t offset = 0;
      for (int in : n.inputs) {
        const std::size_t cnt = nodes_[static_cast<std::size_t>(in)].value.size();
        if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
          auto& gi = grad_slot(in);
          for (std::size_t j = 0; j < cnt; ++j) gi[j] += g[offset + j];
        }
        offset += cnt;
      }
      return;
    }
    case Primitive::kSliceCols: {
      auto& ga = grad_slot(n.a);
      const int rows = n.shape.rows(), w = n.shape.cols();
      const int cols = nodes_[static_cast<std::size_t>(n.a)].shape.cols();
      const int begin = static_cast<int>(n.c0);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < w; ++j)
          ga[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(begin + j)] +=
              g[static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(j)];
      return;
    }
    case Primitive::kSliceRows: {
      auto& ga = grad_slot(n.a);
      const std::size_t offset = static_cast<std::size_t>(n.c0) * static_cast<std::size_t>(n.shape.cols());
      for (std::size_t i = 0; i < sz; ++i) ga[offset + i] += g[i];
      return;
    }
    case Primitive::kGatherRows: {
      auto& ga = grad_slot(n.a);
      const std::size_t cols = static_cast<std::size_t>(n.shape.cols());
      for (std::size_t k = 0; k < n.index.size(); ++k) {
        const std::size_t src = static_cast<std::size_t>(n.index[k]) * cols;
        for (std::size_t j = 0; j < cols; ++j) ga[src + j] += g[k * cols + j];
      }
      return;
    }
    case Primitive::kSelectCols:
    case Primitive::kMaxCols: {
      auto& ga = grad_slot(n.a);
      const std::size_t cols = static_cast<std::size_t>(nodes_[static_cast<std::size_t>(n.a)].shape.cols());
      for (std::size_t r = 0; r < sz; ++r) ga[r * cols + static_cast<std::size_t>(n.index[r])] += g[r];
      return;
    }
    case Primitive::kMinScalar: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i)
        if (x[i] <= n.c0) ga[i] += g[i];
      return;
    }
    case Primitive::kClampMin: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i)
        if (x[i] >= n.c0) ga[i] += g[i];
      return;
    }
    case Primitive::kAbs: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (std::size_t i = 0; i < sz; ++i) {
        if (x[i] > 0.0) ga[i] += g[i];
        else if (x[i] < 0.0) ga[i] -= g[i];
      }
      return;
    }
    case Primitive::kFrobeniusNorm: {
      if (n.value[0] == 0.0) return;
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      const double s = g[0] / n.value[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * x[i];
      return;
    }
    case Primitive::kRowNorm: {
      auto& ga = grad_slot(n.a);
      const auto& x = nodes_[static_cast<std::size_t>(n.a)].value;
      const std::size_t cols = ga.size() / sz;
      for (std::size_t r = 0; r < sz; ++r) {
        if (n.value[r] == 0.0) continue;
        const double s = g[r] / n.value[r];
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += s * x[r * cols + j];
      }
      return;
    }
    case Primitive::kRowMatVec: {
      const Node& nx = nodes_[static_cast<std::size_t>(n.a)];
      const Node& nw = nodes_[static_cast<std::size_t>(n.b)];
      const int rows = nx.shape.rows(), k = nx.shape.cols(), m = n.shape.cols();
      const bool gx = nx.requires_grad, gw = nw.requires_grad;
      double* dx = gx ? grad_slot(n.a).data() : nullptr;
      double* dw = gw ? grad_slot(n.b).data() : nullptr;
      for (int r = 0; r < rows; ++r) {
        const double* gr = g.data() + static_cast<std::ptrdiff_t>(r) * m;
        const double* xr = nx.value.data() + static_cast<std::ptrdiff_t>(r) * k;
        const double* wr = nw.value.data() + static_cast<std::ptrdiff_t>(r) * k * m;
        for (int i = 0; i < k; ++i) {
          const double* wi = wr + static_cast<std::ptrdiff_t>(i) * m;
          if (dx) {
            double s = 0.0;
            for (int a = 0; a < m; ++a) s += gr[a] * wi[a];
            dx[static_cast<std::ptrdiff_t>(r) * k + i] += s;
          }
          if (dw) {
            double* dwi = dw + static_cast<std::ptrdiff_t>(r) * k * m + static_cast<std::ptrdiff_t>(i) * m;
            for (int a = 0; a < m; ++a) dwi[a] += xr[i] * gr[a];
          }
        }
      }
      return;
    }
    case Primitive::kReshape: {
      auto& ga = grad_slot(n.a);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      return;
    }
    default:
      throw std::logic_error(std::string("backward: unhandled primitive ") + primitive_name(n.op));
  }
}

}  // namespace role_forge::ad
