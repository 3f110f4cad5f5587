#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every primitive appends one node whose output is computed
// eagerly. backward() walks the tape in reverse creation order, which is a
// topological order by construction. Nodes own their outputs; there are no
// views or aliasing.
//
// Broadcasting is restricted to the trailing axes. For a binary primitive the
// smaller operand must be one of:
//   * the same shape as the larger one,
//   * a single element (scalar),
//   * a suffix of the larger shape (bias-like, e.g. [D] against [N, D]),
//   * the larger shape with its last axis set to 1 (column-like, e.g. [N, 1]
//     against [N, D]).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tssl/tensor.hpp"

namespace tssl::ad {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kSoftplus,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kLogGamma,
  kDigamma,
  kAbs,
  kMinScalar,
  kSum,
  kMean,
  kSumLast,
  kDotLast,
  kL2Normalize,
  kLogSumExp,
  kConcat,
  kSlice,
  kGatherRows,
  kStopGradient,
  kConv2d,
  kGlobalAvgPool,
  kReshape,
};

std::string_view op_name(Op op);

/// Per-primitive attributes; which fields are meaningful depends on the Op.
struct OpAttrs {
  double scalar = 0.0;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::vector<std::size_t> indices;
  Shape shape;
};

struct GraphNode {
  Op op = Op::kConstant;
  std::vector<NodeId> inputs;
  Tensor output;
  OpAttrs attrs;
  bool is_stop_gradient = false;
  bool requires_grad = false;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
};

/// Adjoints of every node that requires a gradient, indexed by node id.
class GradientMap {
 public:
  bool contains(Var v) const;
  /// Adjoint of v. Nodes that need no gradient (constants, stop-gradient
  /// outputs) raise; parameters never reached by the loss hold exact zeros.
  const Tensor& operator[](Var v) const;
  std::size_t size() const noexcept { return adjoints_.size(); }

 private:
  friend class Graph;
  std::vector<std::optional<Tensor>> adjoints_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Generic entry point: evaluates the primitive eagerly and records it.
  Var apply(Op op, std::span<const Var> inputs, OpAttrs attrs = {});

  /// Gradient of a single-element tensor with respect to every node that
  /// requires one. Deterministic for a fixed graph.
  GradientMap backward(Var loss) const;

  const GraphNode& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Rows whose norm fell below 1e-12 inside l2_normalize.
  std::size_t degenerate_normalizations() const noexcept { return degenerate_; }

  /// Replace the forward values of stop-gradient nodes, in creation order.
  /// Used to evaluate finite differences under detached semantics.
  void freeze_stop_gradients(std::vector<Tensor> values) { frozen_ = std::move(values); }
  std::vector<Tensor> stop_gradient_values() const;

 private:
  Tensor forward(Op op, std::span<const Var> inputs, const OpAttrs& attrs);
  void accumulate_backward(const GraphNode& node, const Tensor& grad,
                           std::vector<std::optional<Tensor>>& adj) const;

  std::vector<GraphNode> nodes_;
  std::vector<Tensor> frozen_;
  std::size_t stop_gradient_count_ = 0;
  std::size_t degenerate_ = 0;
};

// Primitive wrappers. All inputs must belong to the same graph.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var softplus(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var log_gamma(Var a);
Var digamma(Var a);
Var abs(Var a);
/// Elementwise min(a, c).
Var min_scalar(Var a, double c);
Var sum(Var a);
Var mean(Var a);
/// Sum over the last axis; keepdim leaves a trailing axis of size 1.
Var sum_last(Var a, bool keepdim = false);
/// Dot product over the last axis.
Var dot_last(Var a, Var b);
/// Divide each last-axis row by (its L2 norm + 1e-12).
Var l2_normalize(Var a);
Var logsumexp(Var a);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::vector<std::size_t> rows);
Var stop_gradient(Var a);
/// x: [N, C, H, W], w: [O, C, k, k], b: [O]; square kernels, zero padding.
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);
/// [N, C, H, W] -> [N, C].
Var global_avg_pool(Var a);
Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(double c, Var a) { return add_scalar(scale(a, -1.0), c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// Outcome of a finite-difference gradient check.
struct GradCheckReport {
  std::vector<double> max_rel_error;  // one per parameter
  double worst = 0.0;
  bool passed = false;
};

using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

/// Compare analytic gradients against central differences with the given
/// step. Relative error is |a - n| / max(|a|, |n|, abs_floor). Stop-gradient
/// nodes keep their base-point values while parameters are perturbed.
GradCheckReport grad_check(const GraphBuilder& fn, const std::vector<Tensor>& params,
                           double step = 1e-5, double rtol = 1e-4, double abs_floor = 1e-6);

}  // namespace tssl::ad
