#pragma once

// Array-level differentiation engine.
//
// Reverse mode records primitives on a Tape and replays their adjoints in
// exact reverse order. Forward mode rides along with the values: an NdArray
// may carry a tangent of identical shape, and every primitive propagates it
// when at least one input has one. Forward mode is opt-in per evaluation, so
// a plain training pass never allocates tangents.
//
// Closed primitive set: add, sub, mul, scale, matmul, affine, silu, tanh,
// sin, cos, square, sum, mean, concat_cols, slice_cols, stop_gradient.
// Everything else in the library is composed from these.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace meanse::ad {

using Shape = std::vector<std::size_t>;

/// Raised when a primitive produces a non-finite value. `op()` names it.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string op, const std::string& what);
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Raised on shape mismatches and other caller contract violations.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional tangent channel.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  static NdArray scalar(double v) { return NdArray(Shape{}, std::vector<double>{v}); }
  static NdArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return NdArray(Shape{rows, cols}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// Value of a single-element array.
  double item() const;

  bool has_tangent() const noexcept { return tangent_.has_value(); }
  std::span<const double> tangent() const;
  std::span<double> tangent();
  void set_tangent(std::vector<double> tangent);
  void set_tangent(const NdArray& tangent);
  void clear_tangent() noexcept { tangent_.reset(); }
  /// Tangent as a plain array; zeros when no tangent is attached.
  NdArray tangent_array() const;
  /// Same values, tangent dropped.
  NdArray detached() const;

  bool all_finite() const noexcept;

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> tangent_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const NdArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive evaluations.
///
/// A non-recording tape still stores values (and tangents) so that Vars stay
/// addressable, but keeps no adjoint closures; `backward` on it is an error.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double> grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(NdArray value);
  /// Leaf treated as a constant by reverse mode.
  Var constant(NdArray value);

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const NdArray& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Number of nodes that carry an adjoint closure.
  std::size_t differentiable_nodes() const;

  /// Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order.
  void backward(Var loss);
  /// Accumulated gradient of the last backward pass; zeros if unreached.
  NdArray grad(Var v) const;

  // Primitive plumbing. Used by the op implementations.
  Var push(NdArray value, std::string op, std::vector<std::size_t> parents, Backward backward);
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  void accumulate(std::size_t id, std::span<const double> g);

 private:
  struct Node {
    NdArray value;
    std::string op;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    std::vector<double> grad;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

// Primitives. All operands must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// (m x k) . (k x n)
Var matmul(Var a, Var b);
/// x . W^T + b with x (n x in), W (out x in), b (out); b is broadcast over rows.
Var affine(Var x, Var weight, Var bias);
/// x * sigmoid(x)
Var silu(Var x);
Var tanh(Var x);
Var sin(Var x);
Var cos(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
/// Concatenation of two matrices along columns.
Var concat_cols(Var a, Var b);
/// Columns [begin, end) of a matrix.
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Value passthrough; reverse mode treats it as constant and forward-mode
/// tangents through it are zero.
Var stop_gradient(Var x);

using LossFn = std::function<Var(Tape&, std::span<const Var>)>;
using ArrayFn = std::function<std::vector<Var>(Tape&, std::span<const Var>)>;

/// Reverse-mode gradient of a scalar loss with respect to every parameter.
std::vector<NdArray> grad(const LossFn& loss_fn, std::span<const NdArray> params);

struct JvpResult {
  std::vector<NdArray> outputs;
  std::vector<NdArray> tangents;
};

/// Directional derivative of `f` at `inputs` along `tangents` (forward mode).
JvpResult jvp(const ArrayFn& f, std::span<const NdArray> inputs, std::span<const NdArray> tangents);

/// Vector-Jacobian product: cotangents pulled back to the inputs.
std::vector<NdArray> vjp(const ArrayFn& f, std::span<const NdArray> inputs,
                         std::span<const NdArray> cotangents);

}  // namespace meanse::ad
