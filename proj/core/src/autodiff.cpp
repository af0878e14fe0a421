#include "meanse/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace meanse::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapConstVec = Eigen::Map<const Eigen::VectorXd>;

MapConstMat as_mat(const double* p, std::size_t r, std::size_t c) {
  return MapConstMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat as_mat(double* p, std::size_t r, std::size_t c) {
  return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

const double* tangent_ptr(const NdArray& a) { return a.has_tangent() ? a.tangent().data() : nullptr; }

void require_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

void require_matrix(Var a, const char* op) {
  if (a.shape().size() != 2) {
    throw ContractError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

void check_finite(const NdArray& out, const std::string& op) {
  if (!out.all_finite()) throw NumericError(op, "non-finite value produced");
}

/// Elementwise unary op; `deriv` is evaluated at the input.
template <class F, class D>
Var unary(Var x, const char* op, F f, D deriv) {
  Tape& tape = *x.tape();
  const NdArray& xv = x.value();
  NdArray out(xv.shape());
  const std::size_t n = xv.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  if (const double* tx = tangent_ptr(xv)) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = deriv(xv[i]) * tx[i];
    out.set_tangent(std::move(t));
  }
  check_finite(out, op);
  const std::size_t xid = x.id();
  return tape.push(std::move(out), op, {xid},
                   [xid, deriv](Tape& tp, std::span<const double> g) {
                     const NdArray& in = tp.value(xid);
                     std::vector<double> gx(g.size());
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * deriv(in[i]);
                     tp.accumulate(xid, gx);
                   });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

NumericError::NumericError(std::string op, const std::string& what)
    : std::runtime_error("numeric error in '" + op + "': " + what), op_(std::move(op)) {}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw ContractError("NdArray: " + std::to_string(values_.size()) + " values for shape " + shape_string(shape_));
  }
}

std::size_t NdArray::rows() const {
  if (shape_.size() != 2) throw ContractError("rows(): not a matrix " + shape_string(shape_));
  return shape_[0];
}

std::size_t NdArray::cols() const {
  if (shape_.size() != 2) throw ContractError("cols(): not a matrix " + shape_string(shape_));
  return shape_[1];
}

double NdArray::item() const {
  if (values_.size() != 1) throw ContractError("item(): array has " + std::to_string(values_.size()) + " elements");
  return values_[0];
}

std::span<const double> NdArray::tangent() const {
  if (!tangent_) throw ContractError("tangent(): no tangent attached");
  return *tangent_;
}

std::span<double> NdArray::tangent() {
  if (!tangent_) throw ContractError("tangent(): no tangent attached");
  return *tangent_;
}

void NdArray::set_tangent(std::vector<double> tangent) {
  if (tangent.size() != values_.size()) {
    throw ContractError("set_tangent: size " + std::to_string(tangent.size()) + " does not match " +
                        shape_string(shape_));
  }
  tangent_ = std::move(tangent);
}

void NdArray::set_tangent(const NdArray& tangent) {
  if (tangent.shape() != shape_) {
    throw ContractError("set_tangent: shape " + shape_string(tangent.shape()) + " does not match " +
                        shape_string(shape_));
  }
  tangent_ = std::vector<double>(tangent.values().begin(), tangent.values().end());
}

NdArray NdArray::tangent_array() const {
  if (!tangent_) return NdArray(shape_);
  return NdArray(shape_, *tangent_);
}

NdArray NdArray::detached() const { return NdArray(shape_, values_); }

bool NdArray::all_finite() const noexcept {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(values_.begin(), values_.end(), finite)) return false;
  return !tangent_ || std::all_of(tangent_->begin(), tangent_->end(), finite);
}

const NdArray& Var::value() const {
  if (!tape_) throw ContractError("Var: not bound to a tape");
  return tape_->value(id_);
}

Var Tape::variable(NdArray value) {
  check_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), "variable", {}, {}, recording_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(NdArray value) {
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), "constant", {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

std::size_t Tape::differentiable_nodes() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return static_cast<bool>(n.backward); }));
}

Var Tape::push(NdArray value, std::string op, std::vector<std::size_t> parents, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  }
  Node node{std::move(value), std::move(op), std::move(parents), {}, needs, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [this](Var v) { return nodes_[v.id()].requires_grad; });
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::backward(Var loss) {
  if (!recording_) throw ContractError("backward: tape is not recording");
  if (loss.tape() != this) throw ContractError("backward: loss lives on another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // Copy: the closure may accumulate into nodes_ and must not alias n.grad.
    const std::vector<double> g = n.grad;
    n.backward(*this, g);
  }
}

NdArray Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return NdArray(n.value.shape());
  return NdArray(n.value.shape(), n.grad);
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const double* ta = tangent_ptr(av);
  const double* tb = tangent_ptr(bv);
  if (ta || tb) {
    std::vector<double> t(out.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (ta ? ta[i] : 0.0) + (tb ? tb[i] : 0.0);
    out.set_tangent(std::move(t));
  }
  check_finite(out, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), "add", {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const double* ta = tangent_ptr(av);
  const double* tb = tangent_ptr(bv);
  if (ta || tb) {
    std::vector<double> t(out.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (ta ? ta[i] : 0.0) - (tb ? tb[i] : 0.0);
    out.set_tangent(std::move(t));
  }
  check_finite(out, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), "sub", {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    std::vector<double> neg(g.begin(), g.end());
    for (double& v : neg) v = -v;
    tp.accumulate(ib, neg);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const double* ta = tangent_ptr(av);
  const double* tb = tangent_ptr(bv);
  if (ta || tb) {
    std::vector<double> t(out.size(), 0.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = (ta ? ta[i] * bv[i] : 0.0) + (tb ? av[i] * tb[i] : 0.0);
    }
    out.set_tangent(std::move(t));
  }
  check_finite(out, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), "mul", {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    const NdArray& x = tp.value(ia);
    const NdArray& y = tp.value(ib);
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * y[i];
      gb[i] = g[i] * x[i];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var scale(Var a, double factor) {
  const NdArray& av = a.value();
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  if (const double* ta = tangent_ptr(av)) {
    std::vector<double> t(out.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = ta[i] * factor;
    out.set_tangent(std::move(t));
  }
  check_finite(out, "scale");
  const std::size_t ia = a.id();
  return a.tape()->push(std::move(out), "scale", {ia}, [ia, factor](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= factor;
    tp.accumulate(ia, ga);
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ContractError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                        shape_string(bv.shape()));
  }
  NdArray out = NdArray::matrix(m, n);
  as_mat(out.data(), m, n).noalias() = as_mat(av.data(), m, k) * as_mat(bv.data(), k, n);
  const double* ta = tangent_ptr(av);
  const double* tb = tangent_ptr(bv);
  if (ta || tb) {
    std::vector<double> t(m * n, 0.0);
    auto tm = as_mat(t.data(), m, n);
    if (ta) tm.noalias() += as_mat(ta, m, k) * as_mat(bv.data(), k, n);
    if (tb) tm.noalias() += as_mat(av.data(), m, k) * as_mat(tb, k, n);
    out.set_tangent(std::move(t));
  }
  check_finite(out, "matmul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), "matmul", {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::span<const double> g) {
    auto gm = as_mat(g.data(), m, n);
    if (tp.requires_grad(ia)) {
      std::vector<double> ga(m * k);
      as_mat(ga.data(), m, k).noalias() = gm * as_mat(tp.value(ib).data(), k, n).transpose();
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      std::vector<double> gb(k * n);
      as_mat(gb.data(), k, n).noalias() = as_mat(tp.value(ia).data(), m, k).transpose() * gm;
      tp.accumulate(ib, gb);
    }
  });
}

Var affine(Var x, Var weight, Var bias) {
  require_same_tape(x, weight, "affine");
  require_same_tape(x, bias, "affine");
  require_matrix(x, "affine");
  require_matrix(weight, "affine");
  const NdArray& xv = x.value();
  const NdArray& wv = weight.value();
  const NdArray& bv = bias.value();
  const std::size_t n = xv.rows(), in = xv.cols(), out_dim = wv.rows();
  if (wv.cols() != in || bv.size() != out_dim) {
    throw ContractError("affine: incompatible shapes x" + shape_string(xv.shape()) + " W" +
                        shape_string(wv.shape()) + " b" + shape_string(bv.shape()));
  }
  NdArray out = NdArray::matrix(n, out_dim);
  auto om = as_mat(out.data(), n, out_dim);
  om.noalias() = as_mat(xv.data(), n, in) * as_mat(wv.data(), out_dim, in).transpose();
  om.rowwise() += MapConstVec(bv.data(), static_cast<Eigen::Index>(out_dim)).transpose();
  const double* tx = tangent_ptr(xv);
  const double* tw = tangent_ptr(wv);
  const double* tb = tangent_ptr(bv);
  if (tx || tw || tb) {
    std::vector<double> t(n * out_dim, 0.0);
    auto tm = as_mat(t.data(), n, out_dim);
    if (tx) tm.noalias() += as_mat(tx, n, in) * as_mat(wv.data(), out_dim, in).transpose();
    if (tw) tm.noalias() += as_mat(xv.data(), n, in) * as_mat(tw, out_dim, in).transpose();
    if (tb) tm.rowwise() += MapConstVec(tb, static_cast<Eigen::Index>(out_dim)).transpose();
    out.set_tangent(std::move(t));
  }
  check_finite(out, "affine");
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape()->push(
      std::move(out), "affine", {ix, iw, ib}, [ix, iw, ib, n, in, out_dim](Tape& tp, std::span<const double> g) {
        auto gm = as_mat(g.data(), n, out_dim);
        if (tp.requires_grad(ix)) {
          std::vector<double> gx(n * in);
          as_mat(gx.data(), n, in).noalias() = gm * as_mat(tp.value(iw).data(), out_dim, in);
          tp.accumulate(ix, gx);
        }
        if (tp.requires_grad(iw)) {
          std::vector<double> gw(out_dim * in);
          as_mat(gw.data(), out_dim, in).noalias() = gm.transpose() * as_mat(tp.value(ix).data(), n, in);
          tp.accumulate(iw, gw);
        }
        if (tp.requires_grad(ib)) {
          std::vector<double> gb(out_dim);
          Eigen::Map<Eigen::VectorXd>(gb.data(), static_cast<Eigen::Index>(out_dim)) = gm.colwise().sum().transpose();
          tp.accumulate(ib, gb);
        }
      });
}

Var silu(Var x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var tanh(Var x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
      });
}

Var sin(Var x) {
  return unary(x, "sin", [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Var cos(Var x) {
  return unary(x, "cos", [](double v) { return std::cos(v); }, [](double v) { return -std::sin(v); });
}

Var square(Var x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sum(Var x) {
  const NdArray& xv = x.value();
  NdArray out = NdArray::scalar(std::accumulate(xv.values().begin(), xv.values().end(), 0.0));
  if (xv.has_tangent()) {
    auto t = xv.tangent();
    out.set_tangent(std::vector<double>{std::accumulate(t.begin(), t.end(), 0.0)});
  }
  check_finite(out, "sum");
  const std::size_t ix = x.id();
  const std::size_t n = xv.size();
  return x.tape()->push(std::move(out), "sum", {ix}, [ix, n](Tape& tp, std::span<const double> g) {
    tp.accumulate(ix, std::vector<double>(n, g[0]));
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ContractError("mean: empty array");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b, "concat_cols");
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
  if (bv.rows() != n) {
    throw ContractError("concat_cols: row mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  auto join = [&](const double* pa, const double* pb, double* dst) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < ca; ++c) dst[r * (ca + cb) + c] = pa ? pa[r * ca + c] : 0.0;
      for (std::size_t c = 0; c < cb; ++c) dst[r * (ca + cb) + ca + c] = pb ? pb[r * cb + c] : 0.0;
    }
  };
  NdArray out = NdArray::matrix(n, ca + cb);
  join(av.data(), bv.data(), out.data());
  const double* ta = tangent_ptr(av);
  const double* tb = tangent_ptr(bv);
  if (ta || tb) {
    std::vector<double> t(n * (ca + cb));
    join(ta, tb, t.data());
    out.set_tangent(std::move(t));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), "concat_cols", {ia, ib}, [ia, ib, n, ca, cb](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(n * ca), gb(n * cb);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] = g[r * (ca + cb) + c];
      for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] = g[r * (ca + cb) + ca + c];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const NdArray& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (begin >= end || end > c) {
    throw ContractError("slice_cols: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") for " + shape_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  auto cut = [&](const double* src, double* dst) {
    for (std::size_t r = 0; r < n; ++r) std::copy_n(src + r * c + begin, w, dst + r * w);
  };
  NdArray out = NdArray::matrix(n, w);
  cut(xv.data(), out.data());
  if (const double* tx = tangent_ptr(xv)) {
    std::vector<double> t(n * w);
    cut(tx, t.data());
    out.set_tangent(std::move(t));
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), "slice_cols", {ix}, [ix, n, c, begin, w](Tape& tp, std::span<const double> g) {
    std::vector<double> gx(n * c, 0.0);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(g.data() + r * w, w, gx.data() + r * c + begin);
    tp.accumulate(ix, gx);
  });
}

Var stop_gradient(Var x) {
  // No adjoint closure and no tangent: the output is a fresh constant.
  return x.tape()->constant(x.value().detached());
}

std::vector<NdArray> grad(const LossFn& loss_fn, std::span<const NdArray> params) {
  Tape tape(true);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const NdArray& p : params) vars.push_back(tape.variable(p.detached()));
  Var loss = loss_fn(tape, vars);
  if (loss.tape() != &tape) throw ContractError("grad: loss_fn returned a Var from another tape");
  tape.backward(loss);
  std::vector<NdArray> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(tape.grad(v));
  return out;
}

JvpResult jvp(const ArrayFn& f, std::span<const NdArray> inputs, std::span<const NdArray> tangents) {
  if (inputs.size() != tangents.size()) {
    throw ContractError("jvp: " + std::to_string(inputs.size()) + " inputs but " + std::to_string(tangents.size()) +
                        " tangents");
  }
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != tangents[i].shape()) {
      throw ContractError("jvp: tangent " + std::to_string(i) + " has shape " + shape_string(tangents[i].shape()) +
                          ", input has " + shape_string(inputs[i].shape()));
    }
    NdArray in = inputs[i].detached();
    in.set_tangent(tangents[i]);
    vars.push_back(tape.constant(std::move(in)));
  }
  JvpResult result;
  for (Var out : f(tape, vars)) {
    result.outputs.push_back(out.value().detached());
    result.tangents.push_back(out.value().tangent_array());
  }
  return result;
}

std::vector<NdArray> vjp(const ArrayFn& f, std::span<const NdArray> inputs, std::span<const NdArray> cotangents) {
  Tape tape(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const NdArray& in : inputs) vars.push_back(tape.variable(in.detached()));
  std::vector<Var> outs = f(tape, vars);
  if (outs.size() != cotangents.size()) throw ContractError("vjp: cotangent count does not match outputs");
  Var total;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (outs[i].shape() != cotangents[i].shape()) throw ContractError("vjp: cotangent shape mismatch");
    Var term = sum(mul(outs[i], tape.constant(cotangents[i].detached())));
    total = total.valid() ? add(total, term) : term;
  }
  std::vector<NdArray> grads;
  if (!total.valid()) return grads;
  tape.backward(total);
  for (Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

}  // namespace meanse::ad
