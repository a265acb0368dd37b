#include "afl/autograd.h"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_set>

#include "afl/errors.h"

namespace afl {
namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_seq = 0;

std::shared_ptr<Node> new_node(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = g_next_seq++;
  return node;
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

Var self_var(const Node& self) {
  return Var(std::const_pointer_cast<Node>(self.shared_from_this()));
}

bool wants(const Node& self, std::size_t i) { return self.parents[i].requires_grad(); }

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

Var leaf(Tensor value, bool requires_grad) {
  auto node = new_node(std::move(value));
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var constant(Tensor value) { return leaf(std::move(value), false); }
Var constant(double value) { return constant(Tensor::scalar(value)); }

Var stop_gradient(const Var& x) {
  auto node = new_node(x.value());
  node->op = "stop_gradient";
  return Var(std::move(node));
}

Var make_op(const char* op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  auto node = new_node(std::move(value));
  node->op = op;
  node->is_leaf = false;
  bool any = false;
  for (const Var& p : parents) any = any || p.requires_grad();
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// --- elementwise ------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  return make_op("add", map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }),
                 {a, b}, [](const Node&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  return make_op("sub", map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }),
                 {a, b}, [](const Node& self, const Var& g) {
                   return std::vector<Var>{g, wants(self, 1) ? neg(g) : Var()};
                 });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  return make_op("mul", map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }),
                 {a, b}, [](const Node& self, const Var& g) {
                   const Var& x = self.parents[0];
                   const Var& y = self.parents[1];
                   return std::vector<Var>{wants(self, 0) ? mul(g, y) : Var(),
                                           wants(self, 1) ? mul(g, x) : Var()};
                 });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  return make_op("div", map_binary(a.value(), b.value(), [](double x, double y) { return x / y; }),
                 {a, b}, [](const Node& self, const Var& g) {
                   const Var& x = self.parents[0];
                   const Var& y = self.parents[1];
                   Var gx = div(g, y);
                   return std::vector<Var>{wants(self, 0) ? gx : Var(),
                                           wants(self, 1) ? neg(mul(gx, div(x, y))) : Var()};
                 });
}

Var neg(const Var& x) {
  return make_op("neg", map_unary(x.value(), [](double v) { return -v; }), {x},
                 [](const Node&, const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& x, double c) {
  return make_op("scale", map_unary(x.value(), [c](double v) { return v * c; }), {x},
                 [c](const Node&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& x, double c) {
  return make_op("add_scalar", map_unary(x.value(), [c](double v) { return v + c; }), {x},
                 [](const Node&, const Var& g) { return std::vector<Var>{g}; });
}

Var exp(const Var& x) {
  return make_op("exp", map_unary(x.value(), [](double v) { return std::exp(v); }), {x},
                 [](const Node& self, const Var& g) {
                   return std::vector<Var>{mul(g, self_var(self))};
                 });
}

Var log(const Var& x) {
  return make_op("log", map_unary(x.value(), [](double v) { return std::log(v); }), {x},
                 [](const Node& self, const Var& g) {
                   return std::vector<Var>{div(g, self.parents[0])};
                 });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& x) {
  return make_op("sigmoid", map_unary(x.value(), stable_sigmoid), {x},
                 [](const Node& self, const Var& g) {
                   Var s = self_var(self);
                   return std::vector<Var>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
                 });
}

Var relu(const Var& x) {
  return make_op("relu", map_unary(x.value(), [](double v) { return v > 0 ? v : 0.0; }), {x},
                 [](const Node& self, const Var& g) {
                   Tensor mask = map_unary(self.parents[0].value(),
                                           [](double v) { return v > 0 ? 1.0 : 0.0; });
                   return std::vector<Var>{mul(g, constant(std::move(mask)))};
                 });
}

Var pow_scalar(const Var& x, double p) {
  return make_op("pow", map_unary(x.value(), [p](double v) { return std::pow(v, p); }), {x},
                 [p](const Node& self, const Var& g) {
                   return std::vector<Var>{mul(g, scale(pow_scalar(self.parents[0], p - 1.0), p))};
                 });
}

Var sqrt(const Var& x) { return pow_scalar(x, 0.5); }

Var square(const Var& x) { return mul(x, x); }

Var clamp(const Var& x, double lo, double hi) {
  return make_op("clamp", map_unary(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                 {x}, [lo, hi](const Node& self, const Var& g) {
                   Tensor mask = map_unary(self.parents[0].value(), [lo, hi](double v) {
                     return (v >= lo && v <= hi) ? 1.0 : 0.0;
                   });
                   return std::vector<Var>{mul(g, constant(std::move(mask)))};
                 });
}

// --- reductions and shape ---------------------------------------------------------

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_op("sum", Tensor::scalar(total), {x}, [](const Node& self, const Var& g) {
    return std::vector<Var>{expand(g, self.parents[0].shape())};
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var dot(const Var& a, const Var& b) {
  require_same_shape("dot", a, b);
  return sum(mul(a, b));
}

Var expand(const Var& s, const Shape& shape) {
  if (s.size() != 1) {
    throw ShapeError("expand: source must hold one element, got " + shape_str(s.shape()));
  }
  return make_op("expand", Tensor(shape, s.value()[0]), {s}, [](const Node& self, const Var& g) {
    return std::vector<Var>{reshape(sum(g), self.parents[0].shape())};
  });
}

Var reshape(const Var& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_op("reshape", x.value().reshaped(shape), {x}, [](const Node& self, const Var& g) {
    return std::vector<Var>{reshape(g, self.parents[0].shape())};
  });
}

Var index(const Var& x, std::size_t i) {
  if (i >= x.size()) {
    throw ShapeError("index: " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  }
  return make_op("index", Tensor::scalar(x.value()[i]), {x}, [i](const Node& self, const Var& g) {
    return std::vector<Var>{scatter(g, i, self.parents[0].shape())};
  });
}

Var scatter(const Var& s, std::size_t i, const Shape& shape) {
  if (s.size() != 1 || i >= shape_size(shape)) {
    throw ShapeError("scatter: cannot place " + shape_str(s.shape()) + " at " + std::to_string(i) +
                     " in " + shape_str(shape));
  }
  Tensor out(shape);
  out[i] = s.value()[0];
  return make_op("scatter", std::move(out), {s}, [i](const Node& self, const Var& g) {
    return std::vector<Var>{reshape(index(g, i), self.parents[0].shape())};
  });
}

// --- linear algebra ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimension mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_op("matmul", std::move(out), {a, b}, [](const Node& self, const Var& g) {
    const Var& x = self.parents[0];
    const Var& y = self.parents[1];
    return std::vector<Var>{wants(self, 0) ? matmul(g, transpose(y)) : Var(),
                            wants(self, 1) ? matmul(transpose(x), g) : Var()};
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  const double* src = a.value().data();
  double* dst = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  return make_op("transpose", std::move(out), {a},
                 [](const Node&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var broadcast_cols(const Var& b, std::size_t n) {
  require_rank("broadcast_cols", b, 1);
  const std::size_t m = b.shape()[0];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) std::fill_n(out.data() + i * n, n, b.value()[i]);
  return make_op("broadcast_cols", std::move(out), {b},
                 [](const Node&, const Var& g) { return std::vector<Var>{sum_cols(g)}; });
}

Var sum_cols(const Var& x) {
  require_rank("sum_cols", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x.value()[i * n + j];
    out[i] = acc;
  }
  return make_op("sum_cols", std::move(out), {x}, [n](const Node&, const Var& g) {
    return std::vector<Var>{broadcast_cols(g, n)};
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_rank("add_bias", x, 2);
  if (b.shape() != Shape{x.shape()[0]}) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  return add(x, broadcast_cols(b, x.shape()[1]));
}

// --- image ops --------------------------------------------------------------------

Var im2col3x3(const Var& x) {
  require_rank("im2col3x3", x, 3);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t hw = h * w;
  Tensor out(Shape{c * 9, hw});
  const double* src = x.value().data();
  double* dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t row = ch * 9 + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
        double* out_row = dst + row * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            out_row[y * w + xx] = src[ch * hw + static_cast<std::size_t>(sy) * w +
                                      static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
  return make_op("im2col3x3", std::move(out), {x}, [c, h, w](const Node&, const Var& g) {
    return std::vector<Var>{col2im3x3(g, c, h, w)};
  });
}

Var col2im3x3(const Var& cols, std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  if (cols.shape() != Shape{c * 9, hw}) {
    throw ShapeError("col2im3x3: columns " + shape_str(cols.shape()) + " do not match image " +
                     shape_str(Shape{c, h, w}));
  }
  Tensor out(Shape{c, h, w});
  const double* src = cols.value().data();
  double* dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t row = ch * 9 + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
        const double* in_row = src + row * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            dst[ch * hw + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] +=
                in_row[y * w + xx];
          }
        }
      }
    }
  }
  return make_op("col2im3x3", std::move(out), {cols},
                 [](const Node&, const Var& g) { return std::vector<Var>{im2col3x3(g)}; });
}

Var upsample2(const Var& x) {
  require_rank("upsample2", x, 3);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out(Shape{c, 2 * h, 2 * w});
  const double* src = x.value().data();
  double* dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        dst[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
  return make_op("upsample2", std::move(out), {x},
                 [](const Node&, const Var& g) { return std::vector<Var>{sumpool2(g)}; });
}

Var sumpool2(const Var& x) {
  require_rank("sumpool2", x, 3);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("sumpool2: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{c, oh, ow});
  const double* src = x.value().data();
  double* dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        dst[(ch * oh + y / 2) * ow + xx / 2] += src[(ch * h + y) * w + xx];
  return make_op("sumpool2", std::move(out), {x},
                 [](const Node&, const Var& g) { return std::vector<Var>{upsample2(g)}; });
}

Var softmax(const Var& x) {
  double hi = x.value()[0];
  for (double v : x.value().values()) hi = std::max(hi, v);
  Var e = exp(add_scalar(x, -hi));
  return div(e, expand(sum(e), x.shape()));
}

// --- differentiation --------------------------------------------------------------

const Var& GradientMap::at(const Var& leaf) const {
  auto it = entries_.find(leaf.node());
  if (it == entries_.end()) {
    throw ContractError("gradient map: no entry for leaf of shape " + shape_str(leaf.shape()));
  }
  return it->second.second;
}

Var GradientMap::get_or_zero(const Var& leaf) const {
  auto it = entries_.find(leaf.node());
  if (it == entries_.end()) return constant(Tensor(leaf.shape()));
  return it->second.second;
}

GradientMap backward(const Var& root, BackwardOptions options) {
  if (!root.defined() || root.size() != 1) {
    throw ContractError("backward: root must be scalar-valued, got " +
                        (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  GradientMap result;
  if (!root.requires_grad()) return result;

  // Collect every node reachable through differentiable edges.
  std::vector<const Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const Var& p : n->parents) {
      if (p.requires_grad() && seen.insert(p.node()).second) stack.push_back(p.node());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  std::unordered_map<const Node*, Var> pending;
  pending.reserve(order.size());

  std::optional<NoGradGuard> guard;
  if (!options.create_graph) guard.emplace();

  pending.emplace(root.node(), constant(Tensor(root.shape(), 1.0)));
  for (const Node* n : order) {
    auto it = pending.find(n);
    if (it == pending.end()) continue;
    Var g = std::move(it->second);
    pending.erase(it);
    if (n->is_leaf) {
      result.entries_.emplace(
          n, std::make_pair(Var(std::const_pointer_cast<Node>(n->shared_from_this())), g));
      continue;
    }
    std::vector<Var> pgrads = n->backward(*n, g);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const Var& p = n->parents[i];
      if (!p.requires_grad() || !pgrads[i].defined()) continue;
      auto [slot, inserted] = pending.try_emplace(p.node(), pgrads[i]);
      if (!inserted) slot->second = add(slot->second, pgrads[i]);
    }
  }
  return result;
}

Var grad_norm(const GradientMap& grads, const Var& leaf) {
  const Var& g = grads.at(leaf);
  return sqrt(add_scalar(sum(mul(g, g)), 1e-12));
}

double check_gradient(const std::function<Var(const Var&)>& f, const Tensor& x0, double eps) {
  Var x = leaf(x0);
  Var y = f(x);
  GradientMap grads = backward(y, {.create_graph = false});
  const Tensor analytic = grads.get_or_zero(x).value();

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor plus = x0, minus = x0;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(constant(plus)).item();
    const double fm = f(constant(minus)).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleError("check_gradient: non-finite evaluation at coordinate " +
                        std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace afl
