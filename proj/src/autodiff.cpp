#include "dualkg/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dualkg/parameters.hpp"

namespace dualkg::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const char* why) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b) + " (" +
                   why + ")");
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const char* why) {
  throw ShapeError(std::string(op) + ": unsupported shape " + shape_string(a) + " (" + why + ")");
}

void require_same_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(op) + ": uninitialized Var");
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

void require_valid(const char* op, Var a) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": uninitialized Var");
}

// Matrix view of a rank <= 2 tensor; rank-1 as row (as_row) or column.
struct MatView {
  std::size_t rows;
  std::size_t cols;
};

MatView view_of(const Tensor& t, bool as_row) {
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  if (t.rank() == 1) return as_row ? MatView{1, t.shape()[0]} : MatView{t.shape()[0], 1};
  return {1, 1};
}

enum class Broadcast { kNone, kRow };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return Broadcast::kRow;
  shape_fail(op, a, b, "expected equal shapes or a rank-1 operand matching the trailing dimension");
}

// Sum of a [m, n] gradient over rows, for the broadcast operand.
Tensor reduce_rows(const Tensor& g) {
  const std::size_t m = g.shape()[0];
  const std::size_t n = g.shape()[1];
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += g[i * n + j];
  return out;
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv_from_in_out) {
  require_valid(op, a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, deriv_from_in_out](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    const Tensor& x = tape.value(ia);
    const Tensor& y = tape.value(self);
    Tensor& gx = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv_from_in_out(x[i], y[i]);
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw std::invalid_argument("Var::value: uninitialized Var");
  return tape_->value(id_);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  if (options_.verify_finite) {
    const Tensor& v = node.external ? *node.external : node.value;
    v.check_finite("tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = options_.track_gradients;
  return push(std::move(node));
}

Var Tape::parameter(const ParameterStore& store, const std::string& name) {
  if (auto it = parameter_nodes_.find(name); it != parameter_nodes_.end()) return Var(this, it->second);
  Node node;
  node.external = &store.get(name);
  node.requires_grad = options_.track_gradients;
  Var v = push(std::move(node));
  parameter_nodes_.emplace(name, v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (options_.track_gradients) {
    node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var v) { return nodes_[v.id()].requires_grad; });
    if (node.requires_grad) node.backward = std::move(backward);
  }
  return push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.has_grad) return n.grad;
  return Tensor::zeros_like(value(v.id()));
}

const Tensor* Tape::grad_if_any(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.has_grad ? &n.grad : nullptr;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(value(id));
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate_grad(std::size_t id, const Tensor& contribution) {
  if (!nodes_[id].requires_grad) return;
  grad_buffer(id).accumulate(contribution);
}

void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  const Tensor& l = value(loss.id());
  if (l.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(l.shape()));
  if (!nodes_[loss.id()].requires_grad) throw std::invalid_argument("backward: loss does not depend on tracked values");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

GradientMap Tape::parameter_gradients(const ParameterStore& store) const {
  GradientMap out;
  for (const auto& [name, slot] : store.slots()) {
    auto it = parameter_nodes_.find(name);
    const Tensor* g = it == parameter_nodes_.end() ? nullptr : grad_if_any(it->second);
    out.emplace(name, g ? *g : Tensor::zeros_like(slot.value));
  }
  return out;
}

void Tape::add_parameter_gradients(const ParameterStore& store, GradientMap& into) const {
  for (const auto& [name, slot] : store.slots()) {
    auto node = parameter_nodes_.find(name);
    const Tensor* g = node == parameter_nodes_.end() ? nullptr : grad_if_any(node->second);
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g ? *g : Tensor::zeros_like(slot.value));
    } else if (g) {
      it->second.accumulate(*g);
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() < 1 || x.rank() > 2 || y.rank() < 1 || y.rank() > 2) {
    shape_fail("matmul", x.shape(), y.shape(), "operands must be rank 1 or 2");
  }
  const MatView va = view_of(x, true);
  const MatView vb = view_of(y, false);
  if (va.cols != vb.rows) shape_fail("matmul", x.shape(), y.shape(), "inner dimensions differ");
  Shape out_shape;
  if (x.rank() == 2) out_shape.push_back(va.rows);
  if (y.rank() == 2) out_shape.push_back(vb.cols);
  Tensor out(out_shape);
  MatrixMap(out.data().data(), va.rows, vb.cols).noalias() =
      ConstMatrixMap(x.data().data(), va.rows, va.cols) * ConstMatrixMap(y.data().data(), vb.rows, vb.cols);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, va, vb](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    ConstMatrixMap gm(g.data().data(), va.rows, vb.cols);
    if (tape.requires_grad(ia)) {
      const Tensor& y = tape.value(ib);
      Tensor& ga = tape.grad_buffer(ia);
      MatrixMap(ga.data().data(), va.rows, va.cols).noalias() +=
          gm * ConstMatrixMap(y.data().data(), vb.rows, vb.cols).transpose();
    }
    if (tape.requires_grad(ib)) {
      const Tensor& x = tape.value(ia);
      Tensor& gb = tape.grad_buffer(ib);
      MatrixMap(gb.data().data(), vb.rows, vb.cols).noalias() +=
          ConstMatrixMap(x.data().data(), va.rows, va.cols).transpose() * gm;
    }
  });
}

Var transpose(Var a) {
  require_valid("transpose", a);
  const Tensor& x = a.value();
  if (x.rank() != 2) shape_fail("transpose", x.shape(), "expected rank 2");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, m, n](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    Tensor& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

namespace {

Var add_or_sub(const char* op, Var a, Var b, double sign) {
  require_same_tape(op, a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind(op, x.shape(), y.shape());
  Tensor out = x;
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sign * y[kind == Broadcast::kRow ? i % n : i];
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, kind, sign](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    tape.accumulate_grad(ia, g);
    if (!tape.requires_grad(ib)) return;
    Tensor gb = kind == Broadcast::kRow ? reduce_rows(g) : g;
    if (sign != 1.0)
      for (double& v : gb.data()) v *= sign;
    tape.accumulate_grad(ib, gb);
  });
}

}  // namespace

Var add(Var a, Var b) { return add_or_sub("add", a, b, 1.0); }
Var sub(Var a, Var b) { return add_or_sub("sub", a, b, -1.0); }

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind("mul", x.shape(), y.shape());
  Tensor out = x;
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[kind == Broadcast::kRow ? i % n : i];
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, kind](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    const Tensor& x = tape.value(ia);
    const Tensor& y = tape.value(ib);
    const std::size_t n = y.numel();
    if (tape.requires_grad(ia)) {
      Tensor& ga = tape.grad_buffer(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[kind == Broadcast::kRow ? i % n : i];
    }
    if (tape.requires_grad(ib)) {
      Tensor& gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[kind == Broadcast::kRow ? i % n : i] += g[i] * x[i];
    }
  });
}

Var scale_rows(Var a, Var s) {
  require_same_tape("scale_rows", a, s);
  const Tensor& x = a.value();
  const Tensor& w = s.value();
  if (x.rank() != 2 || w.rank() != 1 || w.shape()[0] != x.shape()[0]) {
    shape_fail("scale_rows", x.shape(), w.shape(), "expected [m, n] and [m]");
  }
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  Tensor out = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= w[i];
  const std::size_t ia = a.id();
  const std::size_t is = s.id();
  return a.tape().record(std::move(out), {a, s}, [ia, is, m, n](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    if (tape.requires_grad(ia)) {
      const Tensor& w = tape.value(is);
      Tensor& ga = tape.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * w[i];
    }
    if (tape.requires_grad(is)) {
      const Tensor& x = tape.value(ia);
      Tensor& gs = tape.grad_buffer(is);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gs[i] += g[i * n + j] * x[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double c) {
  return unary("mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var pow_scalar(Var a, double e) {
  return unary(
      "pow_scalar", a, [e](double x) { return std::pow(x, e); },
      [e](double x, double) {
        if (e == 0.0) return 0.0;
        // x^e has an unbounded slope at 0 for 0 < e < 1; use 0 there.
        if (x == 0.0 && e < 1.0) return 0.0;
        return e * std::pow(x, e - 1.0);
      });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double z = std::exp(x);
        return z / (1.0 + z);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Structural

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (Var p : parts) require_same_tape("concat", parts.front(), p);
  const Shape& first = parts.front().shape();
  const std::size_t rank = first.size();
  if (rank == 0 || rank > 2 || axis >= rank) shape_fail("concat", first, "axis out of range or unsupported rank");
  for (Var p : parts) {
    const Shape& s = p.shape();
    if (s.size() != rank || (rank == 2 && s[1 - axis] != first[1 - axis])) {
      shape_fail("concat", first, s, "non-concatenated dimensions differ");
    }
  }
  // Treat every part as [outer, inner_k]; axis 0 has outer = 1.
  const std::size_t outer = (rank == 2 && axis == 1) ? first[0] : 1;
  std::vector<std::size_t> inner;
  std::size_t total_inner = 0;
  for (Var p : parts) {
    inner.push_back(p.value().numel() / outer);
    total_inner += inner.back();
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (Var p : parts) out_shape[axis] += p.shape()[axis];
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(o * inner[k]), inner[k],
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * total_inner + offset));
    offset += inner[k];
  }
  std::vector<std::size_t> ids;
  for (Var p : parts) ids.push_back(p.id());
  return parts.front().tape().record(
      std::move(out), parts, [ids, inner, outer, total_inner](Tape& tape, std::size_t self) {
        const Tensor& g = *tape.grad_if_any(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (tape.requires_grad(ids[k])) {
            Tensor& gk = tape.grad_buffer(ids[k]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < inner[k]; ++i) gk[o * inner[k] + i] += g[o * total_inner + offset + i];
          }
          offset += inner[k];
        }
      });
}

namespace {

Var reduce_axis(const char* op, Var a, std::size_t axis, bool average) {
  require_valid(op, a);
  const Tensor& x = a.value();
  if (x.rank() != 2 || axis > 1) shape_fail(op, x.shape(), "expected rank 2 with axis 0 or 1");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const std::size_t count = axis == 0 ? m : n;
  const double scale = average ? (count ? 1.0 / static_cast<double>(count) : 0.0) : 1.0;
  Tensor out(Shape{axis == 0 ? n : m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x[i * n + j] * scale;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, m, n, axis, scale](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    Tensor& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[axis == 0 ? j : i] * scale;
  });
}

Var reduce_all(const char* op, Var a, bool average) {
  require_valid(op, a);
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double scale = average ? (x.numel() ? 1.0 / static_cast<double>(x.numel()) : 0.0) : 1.0;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total * scale), {a}, [ia, scale](Tape& tape, std::size_t self) {
    const double g = (*tape.grad_if_any(self))[0] * scale;
    Tensor& ga = tape.grad_buffer(ia);
    for (double& v : ga.data()) v += g;
  });
}

}  // namespace

Var sum(Var a, std::size_t axis) { return reduce_axis("sum", a, axis, false); }
Var mean(Var a, std::size_t axis) { return reduce_axis("mean", a, axis, true); }
Var sum_all(Var a) { return reduce_all("sum_all", a, false); }
Var mean_all(Var a) { return reduce_all("mean_all", a, true); }

namespace {

// Softmax over groups: element (o, k, i) at o * stride_o + k * stride_k + i,
// normalized over k. mask may be null.
struct SoftmaxLayout {
  std::size_t groups;
  std::size_t length;
  std::size_t group_stride;
  std::size_t elem_stride;
  std::size_t index(std::size_t g, std::size_t k) const {
    // group_stride == 1 means column softmax: group g is a column.
    return group_stride == 1 ? g + k * elem_stride : g * group_stride + k;
  }
};

Var softmax_impl(const char* op, Var a, SoftmaxLayout layout, const Tensor* mask) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t g = 0; g < layout.groups; ++g) {
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t k = 0; k < layout.length; ++k) {
      const std::size_t i = layout.index(g, k);
      if (mask && (*mask)[i] == 0.0) continue;
      peak = std::max(peak, x[i]);
      any = true;
    }
    if (!any) throw std::invalid_argument(std::string(op) + ": row " + std::to_string(g) + " is fully masked");
    double total = 0.0;
    for (std::size_t k = 0; k < layout.length; ++k) {
      const std::size_t i = layout.index(g, k);
      if (mask && (*mask)[i] == 0.0) continue;
      out[i] = std::exp(x[i] - peak);
      total += out[i];
    }
    for (std::size_t k = 0; k < layout.length; ++k) out[layout.index(g, k)] /= total;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, layout](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    const Tensor& y = tape.value(self);
    Tensor& ga = tape.grad_buffer(ia);
    // Masked entries have y == 0, so they drop out of both terms.
    for (std::size_t grp = 0; grp < layout.groups; ++grp) {
      double dot = 0.0;
      for (std::size_t k = 0; k < layout.length; ++k) {
        const std::size_t i = layout.index(grp, k);
        dot += g[i] * y[i];
      }
      for (std::size_t k = 0; k < layout.length; ++k) {
        const std::size_t i = layout.index(grp, k);
        ga[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

}  // namespace

Var softmax(Var a, std::size_t axis) {
  require_valid("softmax", a);
  const Shape& s = a.shape();
  if (s.size() == 1) return softmax_impl("softmax", a, {1, s[0], s[0], 1}, nullptr);
  if (s.size() == 2 && axis == 1) return softmax_impl("softmax", a, {s[0], s[1], s[1], 1}, nullptr);
  if (s.size() == 2 && axis == 0) return softmax_impl("softmax", a, {s[1], s[0], 1, s[1]}, nullptr);
  shape_fail("softmax", s, "expected rank 1, or rank 2 with axis 0 or 1");
}

Var masked_softmax(Var a, const Tensor& mask) {
  require_valid("masked_softmax", a);
  const Shape& s = a.shape();
  if (s.size() != 2) shape_fail("masked_softmax", s, "expected rank 2");
  if (mask.shape() != s) shape_fail("masked_softmax", s, mask.shape(), "mask must match input");
  return softmax_impl("masked_softmax", a, {s[0], s[1], s[1], 1}, &mask);
}

Var row_select(Var a, std::span<const std::size_t> indices) {
  require_valid("row_select", a);
  const Tensor& x = a.value();
  if (x.rank() != 1 && x.rank() != 2) shape_fail("row_select", x.shape(), "expected rank 1 or 2");
  const std::size_t rows = x.shape()[0];
  const std::size_t width = x.rank() == 2 ? x.shape()[1] : 1;
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) {
      throw ShapeError("row_select: index " + std::to_string(indices[k]) + " out of range for shape " +
                       shape_string(x.shape()));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * width));
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record(std::move(out), {a}, [ia, idx = std::move(idx), width](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    Tensor& ga = tape.grad_buffer(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) ga[idx[k] * width + j] += g[k * width + j];
  });
}

Var scatter_add(Var a, std::span<const std::size_t> indices, std::size_t out_rows) {
  require_valid("scatter_add", a);
  const Tensor& x = a.value();
  if (x.rank() != 1 && x.rank() != 2) shape_fail("scatter_add", x.shape(), "expected rank 1 or 2");
  if (x.shape()[0] != indices.size()) {
    throw ShapeError("scatter_add: " + std::to_string(indices.size()) + " indices for leading dimension of " +
                     shape_string(x.shape()));
  }
  const std::size_t width = x.rank() == 2 ? x.shape()[1] : 1;
  Shape out_shape = x.shape();
  out_shape[0] = out_rows;
  Tensor out(out_shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= out_rows) {
      throw ShapeError("scatter_add: index " + std::to_string(indices[k]) + " out of range for " +
                       std::to_string(out_rows) + " output rows");
    }
    for (std::size_t j = 0; j < width; ++j) out[indices[k] * width + j] += x[k * width + j];
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record(std::move(out), {a}, [ia, idx = std::move(idx), width](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    Tensor& ga = tape.grad_buffer(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) ga[k * width + j] += g[idx[k] * width + j];
  });
}

Var reshape(Var a, Shape shape) {
  require_valid("reshape", a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.grad_if_any(self);
    Tensor& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

}  // namespace dualkg::ad
