// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense fp64 arrays.
//
// A Tape records primitive applications in topological order. Values are
// row-major; for most primitives a tensor is viewed as a [rows, cols] matrix
// where cols is the last dimension and rows is the product of the others.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace role_forge::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense shape of rank 1..4 with strictly positive dimensions.
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() : Shape({1}) {}
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::span<const int> dims);

  int rank() const { return rank_; }
  int operator[](int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  std::size_t numel() const;
  /// Size of the last axis.
  int cols() const { return dims_[static_cast<std::size_t>(rank_ - 1)]; }
  /// Product of all but the last axis.
  int rows() const { return static_cast<int>(numel() / static_cast<std::size_t>(cols())); }
  bool is_scalar() const { return numel() == 1; }

  std::string str() const;
  std::vector<int> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (int i = 0; i < a.rank_; ++i)
      if (a.dims_[static_cast<std::size_t>(i)] != b.dims_[static_cast<std::size_t>(i)]) return false;
    return true;
  }

 private:
  std::array<int, kMaxRank> dims_{};
  int rank_ = 0;
};

/// Plain value tensor (no gradient bookkeeping).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() : shape({1}), data(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor matrix(int rows, int cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape.cols()) + static_cast<std::size_t>(c)]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(shape.cols()) + static_cast<std::size_t>(c)]; }
  std::size_t size() const { return data.size(); }
};

enum class Primitive : std::uint8_t {
  kLeaf,
  kMatMul,
  kAddBias,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAffine,
  kRelu,
  kSigmoid,
  kTanh,
  kExp,
  kLog,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kSumCols,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kSliceRows,
  kGatherRows,
  kSelectCols,
  kMaxCols,
  kMinScalar,
  kClampMin,
  kAbs,
  kFrobeniusNorm,
  kRowNorm,
  kRowMatVec,
  kReshape,
};

const char* primitive_name(Primitive p);

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Shape& shape() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double item() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of primitive applications.
///
/// Single-writer. Distinct tapes may be used concurrently.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var leaf(const Tensor& t, bool requires_grad);
  Var leaf(Tensor&& t, bool requires_grad);
  Var constant(const Tensor& t) { return leaf(t, false); }
  Var constant(Tensor&& t) { return leaf(std::move(t), false); }
  Var variable(const Tensor& t) { return leaf(t, true); }
  /// Constant copy of `x`'s value; gradients do not flow through it.
  Var detach(Var x);

  // Primitives.
  Var matmul(Var a, Var b);
  /// x[..., n] + bias[n], broadcast over every row.
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  /// scale * x + shift.
  Var affine(Var x, double scale, double shift);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var square(Var x);
  Var sqrt(Var x);
  Var sum(Var x);
  Var mean(Var x);
  /// Sum over the last axis: [r, c] -> [r, 1].
  Var sum_cols(Var x);
  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var x, int begin, int end);
  Var slice_rows(Var x, int begin, int end);
  /// out[k, :] = x[index[k], :]. Backward scatter-adds.
  Var gather_rows(Var x, std::vector<int> index);
  /// out[r, 0] = x[r, index[r]].
  Var select_cols(Var x, std::vector<int> index);
  /// out[r, 0] = max_c x[r, c]; gradient routed to the first maximizer.
  Var max_cols(Var x);
  /// min(x, c); derivative 1 at x == c.
  Var min_scalar(Var x, double c);
  /// max(x, c); derivative 1 at x == c.
  Var clamp_min(Var x, double c);
  /// |x|; derivative 0 at x == 0.
  Var abs(Var x);
  /// sqrt(sum x^2) over the whole tensor; zero gradient at the origin.
  Var frobenius_norm(Var x);
  /// Per-row Frobenius norm: [r, c] -> [r, 1].
  Var row_norm(Var x);
  /// out[r, a] = sum_k x[r, k] * w[r, k * m + a] for x [r, k], w [r, k * m].
  Var row_matvec(Var x, Var w);
  Var reshape(Var x, Shape shape);

  /// Fills gradients of every node that requires them with d loss / d node.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(Var v) const { return node(v).shape; }
  const std::vector<double>& value(Var v) const { return node(v).value; }
  const std::vector<double>& grad(Var v) const;
  Tensor value_tensor(Var v) const { return Tensor(node(v).shape, node(v).value); }
  Tensor grad_tensor(Var v) const { return Tensor(node(v).shape, grad(v)); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  Primitive primitive(Var v) const { return node(v).op; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Primitive op = Primitive::kLeaf;
    bool requires_grad = false;
    int a = -1;
    int b = -1;
    double c0 = 0.0;
    double c1 = 0.0;
    std::vector<int> inputs;  // variadic primitives
    std::vector<int> index;   // gather / select / argmax bookkeeping
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  int check(Var v) const;
  Var push(Node&& n);
  Var unary(Primitive op, Var x, double c0 = 0.0, double c1 = 0.0);
  Var binary_same_shape(Primitive op, Var a, Var b);
  void backprop_node(int id);
  std::vector<double>& grad_slot(int id);

  std::vector<Node> nodes_;
  std::vector<double> empty_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);

}  // namespace role_forge::ad
