#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every op records a node when grad mode is on and at least one input
// requires a gradient. Backward rules are themselves written in terms of
// recorded ops, so running backward with create_graph = true yields gradient
// expressions that can be differentiated again (input-gradient penalties,
// Hessian-vector products).
//
// ReLU uses the subgradient 0 at 0 and has second derivative 0 everywhere.
// sqrt and the row norm take gradient 0 at 0.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "larar/tensor.hpp"

namespace larar::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kBroadcastRows,
  kSumRows,
  kBroadcastCols,
  kSumCols,
  kBroadcastScalar,
  kSumAll,
  kRelu,
  kSigmoid,
  kLog,
  kSquare,
  kSqrt,
  kReciprocal,
  kReciprocalSafe,
  kClamp,
  kCustom,
};

std::string_view op_name(OpKind op) noexcept;

using LeafId = std::uint64_t;

// A first-order-only extension op. Its backward works on plain tensors and
// therefore cannot take part in a create_graph pass.
struct CustomOp {
  std::string name;
  std::function<Tensor(const Tensor& input)> forward;
  std::function<Tensor(const Tensor& input, const Tensor& output, const Tensor& grad)> backward;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  // A differentiable input with its own identity.
  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool is_leaf() const;
  OpKind op() const;
  LeafId id() const;

  // Replaces a leaf's value. Graphs recorded against the old value become
  // stale and backward through them throws StaleGraphError.
  void assign(Tensor value);

  // Same value, no history.
  Var detach() const;

  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

// RAII switch that stops op recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---- primitive ops -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// 1 x m -> rows x m
Var broadcast_rows(const Var& row, std::size_t rows);
// n x m -> 1 x m
Var sum_rows(const Var& a);
// n x 1 -> n x cols
Var broadcast_cols(const Var& col, std::size_t cols);
// n x m -> n x 1
Var sum_cols(const Var& a);
// 1 x 1 -> rows x cols
Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols);
Var sum(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);
// 1/x, with 0 where x == 0.
Var reciprocal_safe(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var apply_custom(std::shared_ptr<const CustomOp> op, const Var& a);

// ---- composites ----------------------------------------------------------

Var neg(const Var& a);
Var mean(const Var& a);
// x (n x m) + b (1 x m) on every row.
Var add_row(const Var& x, const Var& bias);
// x (n x m) * s (1 x m) on every row.
Var mul_row(const Var& x, const Var& s);
// Euclidean norm of each row: n x m -> n x 1.
Var l2_norm_rows(const Var& a);
// Elementwise a / b.
Var div(const Var& a, const Var& b);

// ---- differentiation -----------------------------------------------------

class GradMap {
 public:
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  // Gradient for a leaf; zeros of the leaf's shape when the leaf was not reached.
  Tensor get(const Var& leaf) const;
  const Tensor* find(LeafId id) const;
  std::size_t size() const noexcept { return grads_.size(); }
  void insert(LeafId id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::unordered_map<LeafId, Tensor> grads_;
};

struct GradOptions {
  bool create_graph = false;
  // Empty means "ones", which requires a 1 x 1 root.
  Tensor seed;
};

// d(root)/d(leaf) for every requires-grad leaf reachable from root.
GradMap backward(const Var& root, const Tensor& seed = {});

// Gradients with respect to the given vars (leaf or not). Unreached vars get
// a zero constant. With create_graph the results are differentiable.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, const GradOptions& opts = {});

// Differentiates functional(d root / d inner) with respect to each of
// `outer`. The default functional is the squared Euclidean norm.
GradMap grad_of_grad(const Var& root, const Var& inner, std::span<const Var> outer,
                     const std::function<Var(const Var&)>& functional = {});

}  // namespace larar::ad
