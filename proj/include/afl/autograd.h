#ifndef AFL_AUTOGRAD_H_
#define AFL_AUTOGRAD_H_

// Reverse-mode automatic differentiation over dense tensors.
//
// Every forward op eagerly computes its value and, when any input requires a
// gradient, records its parents and a backward rule. Backward rules are
// written in terms of the same differentiable ops, so with
// BackwardOptions::create_graph the returned gradients are themselves graph
// nodes and can be differentiated again (gradient penalties need this).
//
// A graph is confined to the thread that built it. Recording can be
// suspended per thread with NoGradGuard.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afl/tensor.h"

namespace afl {

class Node;
class Var;

// Returns one gradient per parent; entries for parents that do not require a
// gradient may be left undefined.
using BackwardFn = std::function<std::vector<Var>(const Node& self, const Var& grad)>;

class Node : public std::enable_shared_from_this<Node> {
 public:
  Tensor value;
  const char* op = "leaf";
  std::vector<Var> parents;
  bool requires_grad = false;
  bool is_leaf = true;
  // Creation order within the thread; parents always have a smaller seq.
  std::uint64_t seq = 0;
  BackwardFn backward;
};

// Shared handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // In-place access for optimizers updating parameter leaves.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }
  const std::vector<Var>& parents() const { return node_->parents; }
  std::uint64_t seq() const { return node_->seq; }
  const Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

// --- graph mode ---------------------------------------------------------------

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Turns recording back on inside a NoGradGuard scope.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// --- leaves and custom ops ------------------------------------------------------

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);
Var constant(double value);
// Same value, no gradient flows to x through the result.
Var stop_gradient(const Var& x);

// Registers an op node. Used by the built-in ops and available for tests that
// need a hand-written (possibly wrong) backward rule.
Var make_op(const char* op, Tensor value, std::vector<Var> parents, BackwardFn backward);

// --- elementwise ----------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var exp(const Var& x);
Var log(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var pow_scalar(const Var& x, double p);
Var sqrt(const Var& x);
Var square(const Var& x);
Var clamp(const Var& x, double lo, double hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& x) { return neg(x); }

// --- reductions and shape -------------------------------------------------------

// Rank-0 sum of all entries.
Var sum(const Var& x);
Var mean(const Var& x);
Var dot(const Var& a, const Var& b);
// Broadcasts a single-element tensor to `shape`.
Var expand(const Var& s, const Shape& shape);
Var reshape(const Var& x, const Shape& shape);
// Rank-0 entry at flat index i.
Var index(const Var& x, std::size_t i);
// Zero tensor of `shape` with the single-element s placed at flat index i.
Var scatter(const Var& s, std::size_t i, const Shape& shape);

// --- linear algebra -------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// b[m] -> [m x n], each column a copy of b.
Var broadcast_cols(const Var& b, std::size_t n);
// [m x n] -> [m], sum over columns.
Var sum_cols(const Var& x);
Var add_bias(const Var& x, const Var& b);

// --- image ops (channel-major [C x H x W]) --------------------------------------

// 3x3 patches with zero padding 1 -> [C*9 x H*W].
Var im2col3x3(const Var& x);
Var col2im3x3(const Var& cols, std::size_t channels, std::size_t height, std::size_t width);
// Nearest-neighbour x2 upsampling and its adjoint, 2x2 sum pooling.
Var upsample2(const Var& x);
Var sumpool2(const Var& x);

// Softmax over all entries of x.
Var softmax(const Var& x);

// --- differentiation ------------------------------------------------------------

struct BackwardOptions {
  // Record the backward computation so gradients can be differentiated again.
  bool create_graph = true;
};

class GradientMap {
 public:
  bool contains(const Var& leaf) const { return entries_.count(leaf.node()) != 0; }
  // Throws ContractError if the leaf has no entry.
  const Var& at(const Var& leaf) const;
  // Zero tensor of the leaf's shape when there is no entry.
  Var get_or_zero(const Var& leaf) const;
  std::size_t size() const { return entries_.size(); }

 private:
  friend GradientMap backward(const Var& root, BackwardOptions options);
  std::unordered_map<const Node*, std::pair<Var, Var>> entries_;
};

// Gradients of a single-element root w.r.t. every requires_grad leaf reachable
// through differentiable edges.
GradientMap backward(const Var& root, BackwardOptions options = {});

// sqrt(sum(g^2) + 1e-12) of the leaf's gradient; differentiable when the map
// was built with create_graph.
Var grad_norm(const GradientMap& grads, const Var& leaf);

// Max over coordinates of |a - b| / max(1, |a|, |b|) between the backward-pass
// gradient of f at x0 and central differences with step eps.
double check_gradient(const std::function<Var(const Var&)>& f, const Tensor& x0,
                      double eps = 1e-6);

}  // namespace afl

#endif  // AFL_AUTOGRAD_H_
