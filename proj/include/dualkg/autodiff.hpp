#pragma once

// Reverse-mode differentiation over a per-forward-pass tape.
//
// A Tape owns every intermediate value. Var is a cheap handle (tape pointer +
// node index). Nodes are appended in evaluation order, so the node list is
// already topologically sorted and backward() is a single reverse sweep.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualkg/tensor.hpp"

namespace dualkg {

class ParameterStore;

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  /// Invalidated when more nodes are recorded on the tape.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using GradientMap = std::map<std::string, Tensor>;

class Tape {
 public:
  /// Called during backward with the node's own id; it reads grad(self) and
  /// pushes contributions into the inputs via accumulate_grad().
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Options {
    /// When false no backward closures are stored (inference only).
    bool track_gradients = true;
    /// When true every op output is scanned for NaN/Inf.
    bool verify_finite = false;
  };

  Tape() = default;
  explicit Tape(Options options) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Options& options() const noexcept { return options_; }

  Var constant(Tensor value);
  /// Tracked leaf that is not a named parameter (tests, probes).
  Var variable(Tensor value);
  /// Tracked leaf bound to a parameter. Repeated lookups of the same name
  /// return the same node. The store must outlive the tape and stay unchanged
  /// while the tape is alive.
  Var parameter(const ParameterStore& store, const std::string& name);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id()); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Gradient of the last backward() target w.r.t. the node; zeros if the node
  /// was never reached.
  Tensor grad(Var v) const;
  const Tensor* grad_if_any(std::size_t id) const;
  void accumulate_grad(std::size_t id, const Tensor& contribution);
  /// Mutable access to a node's gradient buffer, allocated as zeros on demand.
  Tensor& grad_buffer(std::size_t id);

  /// Reverse sweep from a single-element tensor. Each node is visited once.
  void backward(Var loss);

  /// Gradients for every parameter in the store. Parameters not touched by this
  /// tape get zero tensors of the right shape.
  GradientMap parameter_gradients(const ParameterStore& store) const;
  /// Adds this tape's parameter gradients into `into` (zeros for parameters
  /// missing from both).
  void add_parameter_gradients(const ParameterStore& store, GradientMap& into) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  Options options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> parameter_nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. All throw ShapeError naming the op and both shapes.

/// Matrix product. Rank-1 left operands act as row vectors and rank-1 right
/// operands as column vectors; the unit dimension is dropped from the result.
Var matmul(Var a, Var b);
Var transpose(Var a);

/// a + b. b may equal a's shape or be a rank-1 bias of a's trailing size.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise a * b. b may equal a's shape or be a rank-1 row broadcast.
Var mul(Var a, Var b);
/// Row-wise scaling: out[i, :] = a[i, :] * s[i].
Var scale_rows(Var a, Var s);

Var neg(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
Var pow_scalar(Var a, double exponent);

Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

/// Concatenate along an axis (0 for rank 1; 0 or 1 for rank 2).
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);

Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);

/// Softmax along an axis; rank 1 ignores axis.
Var softmax(Var a, std::size_t axis);
/// Row-wise softmax over entries where mask != 0. Masked entries are exactly
/// zero and receive no gradient. Every row needs at least one open entry.
Var masked_softmax(Var a, const Tensor& mask);

/// Gather rows (rank 2) or elements (rank 1).
Var row_select(Var a, std::span<const std::size_t> indices);
/// out[indices[i]] += a[i]; out has out_rows leading entries.
Var scatter_add(Var a, std::span<const std::size_t> indices, std::size_t out_rows);

Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace ad
}  // namespace dualkg
