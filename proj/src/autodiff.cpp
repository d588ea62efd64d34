#include "larar/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <cmath>
#include <unordered_set>

#include "larar/errors.hpp"

namespace larar::ad {

struct Node {
  OpKind op = OpKind::kConstant;
  std::shared_ptr<const Tensor> value;
  std::vector<NodePtr> inputs;
  // Leaf versions observed when this node was recorded.
  std::vector<std::uint64_t> input_versions;
  bool requires_grad = false;
  LeafId id = 0;
  std::uint64_t version = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::shared_ptr<const Tensor> mask;
  std::shared_ptr<const CustomOp> custom;
};

namespace {

std::atomic<LeafId> next_id{1};
thread_local bool grad_mode = true;

NodePtr make_node(OpKind op, Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::make_shared<const Tensor>(std::move(value));
  n->id = next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_finite(OpKind op, const Tensor& t) {
  if (!t.all_finite()) {
    throw NonFiniteError("op '" + std::string(op_name(op)) + "' produced a non-finite value");
  }
}

[[noreturn]] void shape_error(OpKind op, const Shape& a, const Shape& b) {
  throw ShapeError("op '" + std::string(op_name(op)) + "': incompatible shapes " + to_string(a) +
                   " and " + to_string(b));
}

// Wraps the result; records inputs when any of them needs a gradient.
Var finish(OpKind op, Tensor value, std::initializer_list<const Var*> inputs) {
  check_finite(op, value);
  NodePtr n = make_node(op, std::move(value));
  if (grad_mode) {
    bool any = false;
    for (const Var* in : inputs) any = any || in->requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const Var* in : inputs) {
        n->inputs.push_back(in->node());
        n->input_versions.push_back(in->node()->version);
      }
    }
  }
  return Var(std::move(n));
}

Var constant_shared(std::shared_ptr<const Tensor> t) {
  auto n = std::make_shared<Node>();
  n->op = OpKind::kConstant;
  n->value = std::move(t);
  n->id = next_id.fetch_add(1, std::memory_order_relaxed);
  return Var(std::move(n));
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor zip(OpKind op, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  Tensor out(a.rows(), a.cols());
  auto x = a.values();
  auto y = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

std::string_view op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kBroadcastRows: return "broadcast_rows";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kBroadcastCols: return "broadcast_cols";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kBroadcastScalar: return "broadcast_scalar";
    case OpKind::kSumAll: return "sum";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kReciprocal: return "reciprocal";
    case OpKind::kReciprocalSafe: return "reciprocal_safe";
    case OpKind::kClamp: return "clamp";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

// ---- Var -----------------------------------------------------------------

Var Var::leaf(Tensor value, bool requires_grad) {
  check_finite(OpKind::kLeaf, value);
  NodePtr n = make_node(OpKind::kLeaf, std::move(value));
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var Var::constant(Tensor value) {
  check_finite(OpKind::kConstant, value);
  return Var(make_node(OpKind::kConstant, std::move(value)));
}

const Tensor& Var::value() const {
  if (!node_) throw Error("use of an undefined Var");
  return *node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
bool Var::is_leaf() const { return node_ && node_->op == OpKind::kLeaf; }
OpKind Var::op() const { return node_->op; }
LeafId Var::id() const { return node_->id; }

void Var::assign(Tensor value) {
  if (!is_leaf()) throw Error("assign() on a non-leaf Var");
  if (value.shape() != node_->value->shape()) shape_error(OpKind::kLeaf, value.shape(), shape());
  check_finite(OpKind::kLeaf, value);
  node_->value = std::make_shared<const Tensor>(std::move(value));
  ++node_->version;
}

Var Var::detach() const { return constant_shared(node_->value); }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }
bool grad_enabled() noexcept { return grad_mode; }

// ---- primitives ----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) shape_error(OpKind::kMatmul, x.shape(), y.shape());
  const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.row(i).data();
    const double* xrow = x.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xrow[p];
      if (xv == 0.0) continue;
      const double* yrow = y.row(p).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  }
  return finish(OpKind::kMatmul, std::move(out), {&a, &b});
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return finish(OpKind::kTranspose, std::move(out), {&a});
}

Var add(const Var& a, const Var& b) {
  return finish(OpKind::kAdd, zip(OpKind::kAdd, a.value(), b.value(), std::plus<>{}), {&a, &b});
}

Var sub(const Var& a, const Var& b) {
  return finish(OpKind::kSub, zip(OpKind::kSub, a.value(), b.value(), std::minus<>{}), {&a, &b});
}

Var mul(const Var& a, const Var& b) {
  return finish(OpKind::kMul, zip(OpKind::kMul, a.value(), b.value(), std::multiplies<>{}),
                {&a, &b});
}

Var scale(const Var& a, double factor) {
  Var r = finish(OpKind::kScale, map(a.value(), [factor](double v) { return v * factor; }), {&a});
  r.node()->lo = factor;
  return r;
}

Var add_scalar(const Var& a, double offset) {
  return finish(OpKind::kAddScalar, map(a.value(), [offset](double v) { return v + offset; }),
                {&a});
}

Var broadcast_rows(const Var& row, std::size_t rows) {
  const Tensor& r = row.value();
  if (r.rows() != 1) shape_error(OpKind::kBroadcastRows, r.shape(), Shape{rows, r.cols()});
  Tensor out(rows, r.cols());
  for (std::size_t i = 0; i < rows; ++i) std::copy(r.values().begin(), r.values().end(), out.row(i).begin());
  return finish(OpKind::kBroadcastRows, std::move(out), {&row});
}

Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += r[j];
  }
  return finish(OpKind::kSumRows, std::move(out), {&a});
}

Var broadcast_cols(const Var& col, std::size_t cols) {
  const Tensor& c = col.value();
  if (c.cols() != 1) shape_error(OpKind::kBroadcastCols, c.shape(), Shape{c.rows(), cols});
  Tensor out(c.rows(), cols);
  for (std::size_t i = 0; i < c.rows(); ++i) std::fill(out.row(i).begin(), out.row(i).end(), c[i]);
  return finish(OpKind::kBroadcastCols, std::move(out), {&col});
}

Var sum_cols(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    out[i] = s;
  }
  return finish(OpKind::kSumCols, std::move(out), {&a});
}

Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols) {
  if (s.value().size() != 1) shape_error(OpKind::kBroadcastScalar, s.shape(), Shape{rows, cols});
  return finish(OpKind::kBroadcastScalar, Tensor(rows, cols, s.value()[0]), {&s});
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return finish(OpKind::kSumAll, Tensor::scalar(s), {&a});
}

Var relu(const Var& a) {
  const Tensor& x = a.value();
  Var r = finish(OpKind::kRelu, map(x, [](double v) { return v > 0.0 ? v : 0.0; }), {&a});
  if (r.requires_grad()) {
    r.node()->mask = std::make_shared<const Tensor>(map(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  }
  return r;
}

Var sigmoid(const Var& a) {
  return finish(OpKind::kSigmoid, map(a.value(), [](double v) {
                  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                  const double e = std::exp(v);
                  return e / (1.0 + e);
                }),
                {&a});
}

Var log(const Var& a) {
  return finish(OpKind::kLog, map(a.value(), [](double v) { return std::log(v); }), {&a});
}

Var square(const Var& a) {
  return finish(OpKind::kSquare, map(a.value(), [](double v) { return v * v; }), {&a});
}

Var sqrt(const Var& a) {
  return finish(OpKind::kSqrt, map(a.value(), [](double v) { return std::sqrt(v); }), {&a});
}

Var reciprocal(const Var& a) {
  return finish(OpKind::kReciprocal, map(a.value(), [](double v) { return 1.0 / v; }), {&a});
}

Var reciprocal_safe(const Var& a) {
  return finish(OpKind::kReciprocalSafe,
                map(a.value(), [](double v) { return v == 0.0 ? 0.0 : 1.0 / v; }), {&a});
}

Var clamp(const Var& a, double lo, double hi) {
  const Tensor& x = a.value();
  Var r = finish(OpKind::kClamp, map(x, [lo, hi](double v) { return std::clamp(v, lo, hi); }), {&a});
  r.node()->lo = lo;
  r.node()->hi = hi;
  if (r.requires_grad()) {
    r.node()->mask = std::make_shared<const Tensor>(
        map(x, [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; }));
  }
  return r;
}

Var apply_custom(std::shared_ptr<const CustomOp> op, const Var& a) {
  Tensor out = op->forward(a.value());
  if (!out.all_finite()) throw NonFiniteError("custom op '" + op->name + "' produced a non-finite value");
  Var r = finish(OpKind::kCustom, std::move(out), {&a});
  r.node()->custom = std::move(op);
  return r;
}

// ---- composites ----------------------------------------------------------

Var neg(const Var& a) { return scale(a, -1.0); }

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var add_row(const Var& x, const Var& bias) {
  if (bias.shape().rows != 1 || bias.shape().cols != x.shape().cols) {
    throw ShapeError("op 'add_row': incompatible shapes " + to_string(x.shape()) + " and " +
                     to_string(bias.shape()));
  }
  return add(x, broadcast_rows(bias, x.shape().rows));
}

Var mul_row(const Var& x, const Var& s) {
  if (s.shape().rows != 1 || s.shape().cols != x.shape().cols) {
    throw ShapeError("op 'mul_row': incompatible shapes " + to_string(x.shape()) + " and " +
                     to_string(s.shape()));
  }
  return mul(x, broadcast_rows(s, x.shape().rows));
}

Var l2_norm_rows(const Var& a) { return sqrt(sum_cols(square(a))); }

Var div(const Var& a, const Var& b) { return mul(a, reciprocal(b)); }

// ---- backward ------------------------------------------------------------

Tensor GradMap::get(const Var& leaf) const {
  if (auto it = grads_.find(leaf.id()); it != grads_.end()) return it->second;
  return Tensor(leaf.shape().rows, leaf.shape().cols);
}

const Tensor* GradMap::find(LeafId id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? nullptr : &it->second;
}

namespace {

// Gradients flowing into each input of `node`, given the gradient at its
// output. Entries for inputs that are not needed stay undefined.
std::vector<Var> input_grads(const NodePtr& node, const Var& g, const std::vector<bool>& needed,
                             bool create_graph) {
  std::vector<Var> out(node->inputs.size());
  auto in = [&](std::size_t i) { return Var(node->inputs[i]); };
  const Var self(node);
  switch (node->op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      break;
    case OpKind::kMatmul:
      if (needed[0]) out[0] = matmul(g, transpose(in(1)));
      if (needed[1]) out[1] = matmul(transpose(in(0)), g);
      break;
    case OpKind::kTranspose:
      out[0] = transpose(g);
      break;
    case OpKind::kAdd:
      out[0] = g;
      out[1] = g;
      break;
    case OpKind::kSub:
      out[0] = g;
      if (needed[1]) out[1] = neg(g);
      break;
    case OpKind::kMul:
      if (needed[0]) out[0] = mul(g, in(1));
      if (needed[1]) out[1] = mul(g, in(0));
      break;
    case OpKind::kScale:
      out[0] = scale(g, node->lo);
      break;
    case OpKind::kAddScalar:
      out[0] = g;
      break;
    case OpKind::kBroadcastRows:
      out[0] = sum_rows(g);
      break;
    case OpKind::kSumRows:
      out[0] = broadcast_rows(g, node->inputs[0]->value->rows());
      break;
    case OpKind::kBroadcastCols:
      out[0] = sum_cols(g);
      break;
    case OpKind::kSumCols:
      out[0] = broadcast_cols(g, node->inputs[0]->value->cols());
      break;
    case OpKind::kBroadcastScalar:
      out[0] = sum(g);
      break;
    case OpKind::kSumAll:
      out[0] = broadcast_scalar(g, node->inputs[0]->value->rows(), node->inputs[0]->value->cols());
      break;
    case OpKind::kRelu:
    case OpKind::kClamp:
      out[0] = mul(g, constant_shared(node->mask));
      break;
    case OpKind::kSigmoid:
      out[0] = mul(g, mul(self, add_scalar(neg(self), 1.0)));
      break;
    case OpKind::kLog:
      out[0] = mul(g, reciprocal(in(0)));
      break;
    case OpKind::kSquare:
      out[0] = mul(g, scale(in(0), 2.0));
      break;
    case OpKind::kSqrt:
      out[0] = mul(g, scale(reciprocal_safe(self), 0.5));
      break;
    case OpKind::kReciprocal:
    case OpKind::kReciprocalSafe:
      out[0] = mul(g, neg(square(self)));
      break;
    case OpKind::kCustom:
      if (create_graph) {
        throw UnsupportedSecondOrderError("op '" + node->custom->name +
                                          "' has no second-derivative rule");
      }
      out[0] = Var::constant(node->custom->backward(*node->inputs[0]->value, *node->value, g.value()));
      break;
  }
  return out;
}

// Nodes reachable from root through recorded edges, parents before children
// (root last).
std::vector<NodePtr> topo_order(const NodePtr& root) {
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const NodePtr& child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

Tensor default_seed(const Var& root, const Tensor& seed) {
  if (!seed.empty()) {
    if (seed.shape() != root.shape()) {
      throw ShapeError("backward: seed shape " + to_string(seed.shape()) +
                       " does not match root shape " + to_string(root.shape()));
    }
    return seed;
  }
  if (root.value().size() != 1) {
    throw ShapeError("backward: non-scalar root " + to_string(root.shape()) + " needs an explicit seed");
  }
  return Tensor(root.shape().rows, root.shape().cols, 1.0);
}

// Runs reverse accumulation. `is_target` marks nodes whose gradient the caller
// wants; returns the accumulated gradient for every target reached.
std::unordered_map<const Node*, Var> run_backward(const Var& root, const Tensor& seed,
                                                  const std::unordered_set<const Node*>* targets,
                                                  bool create_graph) {
  std::unordered_map<const Node*, Var> result;
  if (!root.requires_grad()) return result;

  const std::vector<NodePtr> order = topo_order(root.node());
  auto is_target = [&](const Node* n) {
    return targets ? targets->count(n) != 0 : n->op == OpKind::kLeaf;
  };

  std::unordered_set<const Node*> relevant;
  for (const NodePtr& n : order) {
    bool r = is_target(n.get());
    for (const NodePtr& in : n->inputs) r = r || relevant.count(in.get()) != 0;
    if (r) relevant.insert(n.get());
  }
  if (!relevant.count(root.node().get())) return result;

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node*, Var> grads;
  grads.emplace(root.node().get(), Var::constant(default_seed(root, seed)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& node = *it;
    if (!relevant.count(node.get())) continue;
    auto git = grads.find(node.get());
    if (git == grads.end()) continue;
    Var g = git->second;
    if (is_target(node.get())) result.emplace(node.get(), g);
    if (node->inputs.empty()) continue;

    std::vector<bool> needed(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const NodePtr& in = node->inputs[i];
      if (in->op == OpKind::kLeaf && in->version != node->input_versions[i]) {
        throw StaleGraphError("leaf " + std::to_string(in->id) + " was modified after op '" +
                              std::string(op_name(node->op)) + "' recorded it");
      }
      needed[i] = relevant.count(in.get()) != 0;
    }
    std::vector<Var> gin = input_grads(node, g, needed, create_graph);
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (!needed[i] || !gin[i].defined()) continue;
      const Node* key = node->inputs[i].get();
      auto [slot, inserted] = grads.try_emplace(key, gin[i]);
      if (!inserted) slot->second = add(slot->second, gin[i]);
    }
    // Free intermediate gradients as soon as they have been propagated.
    if (!is_target(node.get())) grads.erase(node.get());
  }
  return result;
}

}  // namespace

GradMap backward(const Var& root, const Tensor& seed) {
  GradMap out;
  for (auto& [node, g] : run_backward(root, seed, nullptr, false)) {
    out.insert(node->id, g.value());
  }
  return out;
}

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, const GradOptions& opts) {
  std::unordered_set<const Node*> targets;
  for (const Var& v : wrt) targets.insert(v.node().get());
  auto found = run_backward(root, opts.seed, &targets, opts.create_graph);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    auto it = found.find(v.node().get());
    if (it != found.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(Var::constant(Tensor(v.shape().rows, v.shape().cols)));
    }
  }
  return out;
}

GradMap grad_of_grad(const Var& root, const Var& inner, std::span<const Var> outer,
                     const std::function<Var(const Var&)>& functional) {
  const Var wrt[] = {inner};
  Var g = grad(root, wrt, GradOptions{.create_graph = true, .seed = {}})[0];
  Var objective = functional ? functional(g) : sum(square(g));
  auto grads = grad(objective, outer);
  GradMap out;
  for (std::size_t i = 0; i < outer.size(); ++i) out.insert(outer[i].id(), grads[i].value());
  return out;
}

}  // namespace larar::ad
