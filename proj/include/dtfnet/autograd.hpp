#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "dtfnet/error.hpp"
#include "dtfnet/parallel.hpp"
#include "dtfnet/tensor.hpp"

namespace dtfnet {

// Handle into a Tape. Plain index; cheap to copy.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
// every input id precedes its consumers; the backward pass visits nodes
// exactly once in reverse order. A tape is built per forward pass and is not
// shared between threads.
class Tape {
 public:
  // Called with the tape and the node's own handle; accumulates into the
  // inputs' grad buffers.
  using BackFn = std::function<void(Tape&, Var)>;

  Var leaf(Tensor value, bool requires_grad = false) {
    debug_check_finite(value);
    Node n;
    n.value = std::move(value);
    n.needs = requires_grad;
    n.is_param = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. `back` is dropped when no input needs gradients.
  // `watch` lists sibling outputs of the same op whose incoming gradient
  // should also trigger this node's closure (used by two-output ops).
  Var make(Tensor value, std::vector<int> inputs, BackFn back,
           std::vector<int> watch = {}) {
    debug_check_finite(value);
    Node n;
    n.value = std::move(value);
    for (int id : inputs) n.needs = n.needs || nodes_[id].needs;
    n.inputs = std::move(inputs);
    if (n.needs) n.back = std::move(back);
    n.watch = std::move(watch);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  const Tensor& val(Var v) const { return node(v).value; }

  bool wants(Var v) const { return node(v).needs; }

  bool touched(Var v) const { return node(v).has_grad; }

  // Gradient accumulator, lazily allocated to the value's shape.
  Tensor& gbuf(Var v) {
    Node& n = node(v);
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Gradient of a node after backward(); zeros if the node was never reached.
  const Tensor& grad(Var v) { return gbuf(v); }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Reverse sweep from `loss`. Returns d loss / d p for every node created
  // with requires_grad. Grads are reset first, so repeated calls over the
  // same tape produce identical results.
  std::map<int, Tensor> backward(Var loss) {
    if (loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
      throw DetachedNode("backward: loss is not on this tape");
    if (nodes_[loss.id].value.numel() != 1)
      throw NonScalarLoss("backward: loss has " +
                          std::to_string(nodes_[loss.id].value.numel()) +
                          " elements");
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    gbuf(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.back) continue;
      bool fire = n.has_grad;
      for (int w : n.watch) fire = fire || nodes_[w].has_grad;
      if (fire) n.back(*this, Var{i});
    }
    std::map<int, Tensor> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].is_param) continue;
      Var v{static_cast<int>(i)};
      out.emplace(v.id, grad(v));
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    std::vector<int> watch;
    BackFn back;
    bool needs = false;
    bool is_param = false;
    bool has_grad = false;
  };

  Node& node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw DetachedNode("node id " + std::to_string(v.id) + " not on tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Core differentiable operations. Backward passes are written in gather form
// (each gradient element computed by a single loop iteration) so results do
// not depend on thread count.
// ---------------------------------------------------------------------------

namespace ops {

inline Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return t.make(std::move(out), {a.id, b.id}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    for (Var v : {a, b}) {
      if (!tp.wants(v)) continue;
      Tensor& d = tp.gbuf(v);
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    }
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return t.make(std::move(out), {a.id, b.id}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    if (tp.wants(a)) {
      Tensor& d = tp.gbuf(a);
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    }
    if (tp.wants(b)) {
      Tensor& d = tp.gbuf(b);
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] -= g[i];
    }
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return t.make(std::move(out), {a.id, b.id}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    if (tp.wants(a)) {
      Tensor& d = tp.gbuf(a);
      const Tensor& other = tp.val(b);
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * other[i];
    }
    if (tp.wants(b)) {
      Tensor& d = tp.gbuf(b);
      const Tensor& other = tp.val(a);
      for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * other[i];
    }
  });
}

inline Var scale(Tape& t, Var a, double c) {
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * c;
  return t.make(std::move(out), {a.id}, [a, c](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor& d = tp.gbuf(a);
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * c;
  });
}

inline Var sum_all(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
  return t.make(Tensor::scalar(acc), {a.id}, [a](Tape& tp, Var self) {
    const double g = tp.grad(self)[0];
    Tensor& d = tp.gbuf(a);
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g;
  });
}

// Subgradient at 0 is defined as 0.
inline Var relu(Tape& t, Var a) {
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return t.make(std::move(out), {a.id}, [a](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.val(a);
    Tensor& d = tp.gbuf(a);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0) d[i] += g[i];
  });
}

inline Var reshape(Tape& t, Var a, Shape shape) {
  Tensor out = tensor_reshape(t.val(a), std::move(shape));
  return t.make(std::move(out), {a.id}, [a](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor& d = tp.gbuf(a);
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

inline Var permute(Tape& t, Var a, std::vector<std::size_t> axes) {
  Tensor out = tensor_permute(t.val(a), axes);
  return t.make(std::move(out), {a.id},
                [a, axes = std::move(axes)](Tape& tp, Var self) {
                  Tensor gperm =
                      tensor_permute(tp.grad(self), inverse_permutation(axes));
                  Tensor& d = tp.gbuf(a);
                  for (std::size_t i = 0; i < gperm.numel(); ++i)
                    d[i] += gperm[i];
                });
}

// Concatenation along `axis`; all other extents must agree.
inline Var concat(Tape& t, Var a, Var b, std::size_t axis) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (av.rank() != bv.rank() || axis >= av.rank())
    throw ShapeMismatch("concat: rank/axis mismatch");
  for (std::size_t i = 0; i < av.rank(); ++i)
    if (i != axis && av.dim(i) != bv.dim(i))
      throw ShapeMismatch("concat: extents disagree off the concat axis");
  Shape out_shape = av.shape();
  out_shape[axis] += bv.dim(axis);

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
  for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
  const std::size_t a_span = av.dim(axis) * inner;
  const std::size_t b_span = bv.dim(axis) * inner;

  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * (a_span + b_span);
    const double* pa = av.data() + o * a_span;
    const double* pb = bv.data() + o * b_span;
    for (std::size_t i = 0; i < a_span; ++i) dst[i] = pa[i];
    for (std::size_t i = 0; i < b_span; ++i) dst[a_span + i] = pb[i];
  }
  return t.make(std::move(out), {a.id, b.id},
                [a, b, outer, a_span, b_span](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  if (tp.wants(a)) {
                    Tensor& d = tp.gbuf(a);
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* gp = g.data() + o * (a_span + b_span);
                      double* dp = d.data() + o * a_span;
                      for (std::size_t i = 0; i < a_span; ++i) dp[i] += gp[i];
                    }
                  }
                  if (tp.wants(b)) {
                    Tensor& d = tp.gbuf(b);
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* gp =
                          g.data() + o * (a_span + b_span) + a_span;
                      double* dp = d.data() + o * b_span;
                      for (std::size_t i = 0; i < b_span; ++i) dp[i] += gp[i];
                    }
                  }
                });
}

inline Var matmul(Tape& t, Var a, Var b) {
  Tensor out = tensor_matmul(t.val(a), t.val(b));
  return t.make(std::move(out), {a.id, b.id}, [a, b](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    const std::size_t m = av.dim(0), n = av.dim(1), p = bv.dim(1);
    if (tp.wants(a)) {
      // dA = g . B^T
      Tensor& d = tp.gbuf(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j)
            acc += g[i * p + j] * bv[k * p + j];
          d[i * n + k] += acc;
        }
    }
    if (tp.wants(b)) {
      // dB = A^T . g
      Tensor& d = tp.gbuf(b);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            acc += av[i * n + k] * g[i * p + j];
          d[k * p + j] += acc;
        }
    }
  });
}

// Affine map y = x . w^T + b with x: N x Din, w: Dout x Din, b: Dout.
inline Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
      xv.dim(1) != wv.dim(1) || bv.dim(0) != wv.dim(0))
    throw ShapeMismatch("linear: x " + shape_str(xv.shape()) + ", w " +
                        shape_str(wv.shape()) + ", b " + shape_str(bv.shape()));
  const std::size_t N = xv.dim(0), Din = xv.dim(1), Dout = wv.dim(0);
  Tensor out(Shape{N, Dout});
  {
    // Transposed weight turns the row products into axpy updates.
    std::vector<double> wt(Din * Dout);
    const double* wp = wv.data();
    for (std::size_t o = 0; o < Dout; ++o)
      for (std::size_t d = 0; d < Din; ++d) wt[d * Dout + o] = wp[o * Din + d];
    const double* xp = xv.data();
    const double* wtp = wt.data();
    double* op = out.data();
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const double* xrow = xp + i * Din;
        double* orow = op + i * Dout;
        for (std::size_t o = 0; o < Dout; ++o) orow[o] = bv[o];
        for (std::size_t d = 0; d < Din; ++d) {
          const double xd = xrow[d];
          const double* wrow = wtp + d * Dout;
          for (std::size_t o = 0; o < Dout; ++o) orow[o] += xd * wrow[o];
        }
      }
    });
  }
  return t.make(std::move(out), {x.id, w.id, b.id},
                [x, w, b, N, Din, Dout](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  const double* gp = g.data();
                  if (tp.wants(x)) {
                    Tensor& d = tp.gbuf(x);
                    const double* wp = tp.val(w).data();
                    double* dp = d.data();
                    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
                      for (std::size_t i = lo; i < hi; ++i) {
                        const double* grow = gp + i * Dout;
                        double* drow = dp + i * Din;
                        for (std::size_t o = 0; o < Dout; ++o) {
                          const double go = grow[o];
                          const double* wrow = wp + o * Din;
                          for (std::size_t dd = 0; dd < Din; ++dd)
                            drow[dd] += go * wrow[dd];
                        }
                      }
                    });
                  }
                  if (tp.wants(w)) {
                    Tensor& d = tp.gbuf(w);
                    const double* xp = tp.val(x).data();
                    double* dp = d.data();
                    parallel_for(Dout, [&](std::size_t lo, std::size_t hi) {
                      for (std::size_t o = lo; o < hi; ++o) {
                        double* drow = dp + o * Din;
                        for (std::size_t i = 0; i < N; ++i) {
                          const double go = gp[i * Dout + o];
                          const double* xrow = xp + i * Din;
                          for (std::size_t dd = 0; dd < Din; ++dd)
                            drow[dd] += go * xrow[dd];
                        }
                      }
                    });
                  }
                  if (tp.wants(b)) {
                    Tensor& d = tp.gbuf(b);
                    for (std::size_t o = 0; o < Dout; ++o) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < N; ++i)
                        acc += gp[i * Dout + o];
                      d[o] += acc;
                    }
                  }
                });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.
// ---------------------------------------------------------------------------

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max over all coordinates of |analytic - numeric| /
// max(1, |analytic|, |numeric|), with numeric the central difference at
// half-step eps.
inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                         double eps) {
  if (eps <= 0.0) throw OutOfRange("grad_check: eps must be positive");

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(t.leaf(x, false));
    Var loss = f(t, vars);
    const double v = t.val(loss)[0];
    if (!std::isfinite(v))
      throw NonFiniteValue("grad_check: function value is not finite");
    return v;
  };

  // Analytic gradients.
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(t.leaf(x, true));
    Var loss = f(t, vars);
    if (!std::isfinite(t.val(loss)[0]))
      throw NonFiniteValue("grad_check: function value is not finite");
    t.backward(loss);
    for (Var v : vars) analytic.push_back(t.grad(v));
  }

  double max_err = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::size_t i = 0; i < inputs[which].numel(); ++i) {
      const double keep = probe[which][i];
      probe[which][i] = keep + eps;
      const double up = eval(probe);
      probe[which][i] = keep - eps;
      const double down = eval(probe);
      probe[which][i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[which][i];
      const double err = std::fabs(a - numeric) /
                         std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace dtfnet
