#include "mmalign/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "mmalign/fft.hpp"
#include "mmalign/kernels.hpp"

namespace mmalign::ag {

Tensor& Node::g() {
  if (!grad_allocated) {
    grad = Tensor(value.shape());
    grad_allocated = true;
  }
  return grad;
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back,
              const char* opname) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  bool req = false;
  for (const auto& p : n->parents) req = req || p->requires_grad;
  n->requires_grad = req;
  if (req) n->backfn = std::move(back);
  n->op = opname;
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

void require_4d(const Var& x, const char* op) {
  if (x->value.ndim() != 4)
    throw std::invalid_argument(std::string(op) + ": expected 4d tensor, got " +
                                x->value.shape_str());
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

Var detach(const Var& x) { return constant(x->value); }

void backward(const Var& root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  // Iterative post-order DFS; "order" ends up producers-first.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Fresh gradients for everything reachable from this root.
  for (Node* n : order)
    if (n->grad_allocated) n->grad.zero();
  root->g()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && n->requires_grad) n->backfn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor v = a->value;
  v.add_scaled(b->value, 1.0);
  return make_node(std::move(v), {a, b},
                   [](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, 1.0);
                     if (self.parents[1]->requires_grad)
                       self.parents[1]->g().add_scaled(self.grad, 1.0);
                   },
                   "add");
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor v = a->value;
  v.add_scaled(b->value, -1.0);
  return make_node(std::move(v), {a, b},
                   [](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, 1.0);
                     if (self.parents[1]->requires_grad)
                       self.parents[1]->g().add_scaled(self.grad, -1.0);
                   },
                   "sub");
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor v(a->value.shape());
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) v[i] = a->value[i] * b->value[i];
  return make_node(std::move(v), {a, b},
                   [](Node& self) {
                     const Tensor& av = self.parents[0]->value;
                     const Tensor& bv = self.parents[1]->value;
                     const std::int64_t n = self.grad.numel();
                     if (self.parents[0]->requires_grad) {
                       Tensor& ga = self.parents[0]->g();
                       for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[i];
                     }
                     if (self.parents[1]->requires_grad) {
                       Tensor& gb = self.parents[1]->g();
                       for (std::int64_t i = 0; i < n; ++i) gb[i] += self.grad[i] * av[i];
                     }
                   },
                   "mul");
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor v(a->value.shape());
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) v[i] = a->value[i] / b->value[i];
  return make_node(std::move(v), {a, b},
                   [](Node& self) {
                     const Tensor& av = self.parents[0]->value;
                     const Tensor& bv = self.parents[1]->value;
                     const std::int64_t n = self.grad.numel();
                     if (self.parents[0]->requires_grad) {
                       Tensor& ga = self.parents[0]->g();
                       for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] / bv[i];
                     }
                     if (self.parents[1]->requires_grad) {
                       Tensor& gb = self.parents[1]->g();
                       for (std::int64_t i = 0; i < n; ++i)
                         gb[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
                     }
                   },
                   "div");
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  Tensor v = a->value;
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) v[i] += s;
  return make_node(std::move(v), {a},
                   [](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, 1.0);
                   },
                   "add_scalar");
}

Var mul_scalar(const Var& a, double s) {
  Tensor v = a->value;
  v.scale(s);
  return make_node(std::move(v), {a},
                   [s](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, s);
                   },
                   "mul_scalar");
}

Var abs(const Var& a) {
  Tensor v(a->value.shape());
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) v[i] = std::fabs(a->value[i]);
  return make_node(std::move(v), {a},
                   [](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     const Tensor& av = self.parents[0]->value;
                     Tensor& ga = self.parents[0]->g();
                     const std::int64_t n = self.grad.numel();
                     for (std::int64_t i = 0; i < n; ++i) {
                       const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
                       ga[i] += self.grad[i] * s;
                     }
                   },
                   "abs");
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tensor v(a->value.shape());
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a->value[i];
    v[i] = x > 0.0 ? x : slope * x;
  }
  return make_node(std::move(v), {a},
                   [slope](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     const Tensor& av = self.parents[0]->value;
                     Tensor& ga = self.parents[0]->g();
                     const std::int64_t n = self.grad.numel();
                     for (std::int64_t i = 0; i < n; ++i)
                       ga[i] += self.grad[i] * (av[i] > 0.0 ? 1.0 : slope);
                   },
                   "leaky_relu");
}

Var square(const Var& a) { return mul(a, a); }

Var sqrt_eps(const Var& a, double eps) {
  Tensor v(a->value.shape());
  const std::int64_t n = v.numel();
  for (std::int64_t i = 0; i < n; ++i) v[i] = std::sqrt(a->value[i] + eps);
  return make_node(std::move(v), {a},
                   [](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& ga = self.parents[0]->g();
                     const std::int64_t n = self.grad.numel();
                     for (std::int64_t i = 0; i < n; ++i)
                       ga[i] += self.grad[i] * 0.5 / self.value[i];
                   },
                   "sqrt_eps");
}

Var mul_scalarvar(const Var& a, const Var& s) {
  if (s->value.numel() != 1) throw std::invalid_argument("mul_scalarvar: s must be scalar");
  const double sv = s->value[0];
  Tensor v = a->value;
  v.scale(sv);
  return make_node(std::move(v), {a, s},
                   [sv](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, sv);
                     if (self.parents[1]->requires_grad) {
                       double acc = 0.0;
                       const Tensor& av = self.parents[0]->value;
                       const std::int64_t n = self.grad.numel();
                       for (std::int64_t i = 0; i < n; ++i) acc += self.grad[i] * av[i];
                       self.parents[1]->g()[0] += acc;
                     }
                   },
                   "mul_scalarvar");
}

Var div_scalarvar(const Var& a, const Var& s) {
  if (s->value.numel() != 1) throw std::invalid_argument("div_scalarvar: s must be scalar");
  const double sv = s->value[0];
  Tensor v = a->value;
  v.scale(1.0 / sv);
  return make_node(std::move(v), {a, s},
                   [sv](Node& self) {
                     if (self.parents[0]->requires_grad)
                       self.parents[0]->g().add_scaled(self.grad, 1.0 / sv);
                     if (self.parents[1]->requires_grad) {
                       double acc = 0.0;
                       const Tensor& av = self.parents[0]->value;
                       const std::int64_t n = self.grad.numel();
                       for (std::int64_t i = 0; i < n; ++i) acc += self.grad[i] * av[i];
                       self.parents[1]->g()[0] -= acc / (sv * sv);
                     }
                   },
                   "div_scalarvar");
}

Var add_scalarvars(const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_scalarvars: empty");
  double total = 0.0;
  std::vector<Var> parents;
  std::vector<double> weights;
  for (const auto& [w, v] : terms) {
    if (v->value.numel() != 1) throw std::invalid_argument("add_scalarvars: non-scalar term");
    total += w * v->value[0];
    parents.push_back(v);
    weights.push_back(w);
  }
  return make_node(Tensor::scalar(total), std::move(parents),
                   [weights](Node& self) {
                     for (size_t i = 0; i < self.parents.size(); ++i)
                       if (self.parents[i]->requires_grad)
                         self.parents[i]->g()[0] += weights[i] * self.grad[0];
                   },
                   "add_scalarvars");
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  return make_node(Tensor::scalar(a->value.sum()), {a},
                   [](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& ga = self.parents[0]->g();
                     const double g = self.grad[0];
                     const std::int64_t n = ga.numel();
                     for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
                   },
                   "sum");
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  return make_node(Tensor::scalar(a->value.sum() * inv), {a},
                   [inv](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& ga = self.parents[0]->g();
                     const double g = self.grad[0] * inv;
                     const std::int64_t n = ga.numel();
                     for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
                   },
                   "mean");
}

// ---------------------------------------------------------------- structure

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty");
  for (const auto& x : xs) require_4d(x, "concat_channels");
  const int n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int ctot = 0;
  for (const auto& x : xs) {
    if (x->value.dim(0) != n || x->value.dim(2) != h || x->value.dim(3) != w)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    ctot += x->value.dim(1);
  }
  Tensor v({n, ctot, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    int coff = 0;
    for (const auto& x : xs) {
      const int c = x->value.dim(1);
      const double* src = x->value.data() + static_cast<std::int64_t>(b) * c * plane;
      double* dst = v.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
      std::copy(src, src + static_cast<std::int64_t>(c) * plane, dst);
      coff += c;
    }
  }
  return make_node(std::move(v), xs,
                   [n, h, w, ctot](Node& self) {
                     const std::int64_t plane = static_cast<std::int64_t>(h) * w;
                     for (int b = 0; b < n; ++b) {
                       int coff = 0;
                       for (auto& p : self.parents) {
                         const int c = p->value.dim(1);
                         if (p->requires_grad) {
                           double* dst = p->g().data() + static_cast<std::int64_t>(b) * c * plane;
                           const double* src =
                               self.grad.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
                           for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * plane; ++i)
                             dst[i] += src[i];
                         }
                         coff += c;
                       }
                     }
                   },
                   "concat_channels");
}

Var slice_channels(const Var& x, int from, int count) {
  require_4d(x, "slice_channels");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (from < 0 || from + count > c) throw std::invalid_argument("slice_channels: out of range");
  Tensor v({n, count, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const double* src = x->value.data() + (static_cast<std::int64_t>(b) * c + from) * plane;
    double* dst = v.data() + static_cast<std::int64_t>(b) * count * plane;
    std::copy(src, src + static_cast<std::int64_t>(count) * plane, dst);
  }
  return make_node(std::move(v), {x},
                   [n, c, from, count, plane](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     for (int b = 0; b < n; ++b) {
                       double* dst = gx.data() + (static_cast<std::int64_t>(b) * c + from) * plane;
                       const double* src = self.grad.data() + static_cast<std::int64_t>(b) * count * plane;
                       for (std::int64_t i = 0; i < static_cast<std::int64_t>(count) * plane; ++i)
                         dst[i] += src[i];
                     }
                   },
                   "slice_channels");
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor v = x->value.reshaped(shape);
  return make_node(std::move(v), {x},
                   [](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     const std::int64_t n = gx.numel();
                     for (std::int64_t i = 0; i < n; ++i) gx[i] += self.grad[i];
                   },
                   "reshape");
}

// ---------------------------------------------------------------- network

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_4d(x, "conv2d");
  if (w->value.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4d");
  kernels::ConvShape s;
  s.n = x->value.dim(0);
  s.cin = x->value.dim(1);
  s.h = x->value.dim(2);
  s.w = x->value.dim(3);
  s.cout = w->value.dim(0);
  s.kh = w->value.dim(2);
  s.kw = w->value.dim(3);
  s.stride = stride;
  s.pad = pad;
  if (w->value.dim(1) != s.cin) throw std::invalid_argument("conv2d: channel mismatch");
  const bool has_bias = b && b->value.numel() > 0;
  if (has_bias && b->value.numel() != s.cout)
    throw std::invalid_argument("conv2d: bias size mismatch");

  Tensor v({s.n, s.cout, s.hout(), s.wout()});
  kernels::conv2d_forward(x->value.data(), w->value.data(),
                          has_bias ? b->value.data() : nullptr, v.data(), s);
  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_node(std::move(v), std::move(parents),
                   [s, has_bias](Node& self) {
                     const Var& x = self.parents[0];
                     const Var& w = self.parents[1];
                     if (x->requires_grad)
                       kernels::conv2d_dinput(self.grad.data(), w->value.data(), x->g().data(), s);
                     if (w->requires_grad) {
                       double* db = nullptr;
                       if (has_bias && self.parents[2]->requires_grad)
                         db = self.parents[2]->g().data();
                       kernels::conv2d_dweight(x->value.data(), self.grad.data(), w->g().data(),
                                               db, s);
                     }
                   },
                   "conv2d");
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->value.ndim() != 2 || w->value.ndim() != 2)
    throw std::invalid_argument("linear: x and w must be 2d");
  const int n = x->value.dim(0), f = x->value.dim(1), g = w->value.dim(0);
  if (w->value.dim(1) != f) throw std::invalid_argument("linear: feature mismatch");
  const bool has_bias = b && b->value.numel() > 0;
  Tensor v({n, g});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < g; ++j) {
      double acc = has_bias ? b->value[j] : 0.0;
      for (int k = 0; k < f; ++k) acc += x->value.at(i, k) * w->value.at(j, k);
      v.at(i, j) = acc;
    }
  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return make_node(std::move(v), std::move(parents),
                   [n, f, g, has_bias](Node& self) {
                     const Var& x = self.parents[0];
                     const Var& w = self.parents[1];
                     if (x->requires_grad) {
                       Tensor& gx = x->g();
                       for (int i = 0; i < n; ++i)
                         for (int k = 0; k < f; ++k) {
                           double acc = 0.0;
                           for (int j = 0; j < g; ++j)
                             acc += self.grad.at(i, j) * w->value.at(j, k);
                           gx.at(i, k) += acc;
                         }
                     }
                     if (w->requires_grad) {
                       Tensor& gw = w->g();
                       for (int j = 0; j < g; ++j)
                         for (int k = 0; k < f; ++k) {
                           double acc = 0.0;
                           for (int i = 0; i < n; ++i)
                             acc += self.grad.at(i, j) * x->value.at(i, k);
                           gw.at(j, k) += acc;
                         }
                     }
                     if (has_bias && self.parents[2]->requires_grad) {
                       Tensor& gb = self.parents[2]->g();
                       for (int j = 0; j < g; ++j) {
                         double acc = 0.0;
                         for (int i = 0; i < n; ++i) acc += self.grad.at(i, j);
                         gb[j] += acc;
                       }
                     }
                   },
                   "linear");
}

Var instance_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_4d(x, "instance_norm");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (gain->value.numel() != c || bias->value.numel() != c)
    throw std::invalid_argument("instance_norm: gain/bias must have C entries");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;

  Tensor v({n, c, h, w});
  Tensor xhat({n, c, h, w});
  Tensor inv_std({n, c});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      double mu = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) mu += src[i];
      mu /= static_cast<double>(plane);
      double var = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std.at(b, ch) = is;
      const double gc = gain->value[ch], bc = bias->value[ch];
      double* xh = xhat.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      double* dst = v.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mu) * is;
        dst[i] = gc * xh[i] + bc;
      }
    }
  }
  return make_node(
      std::move(v), {x, gain, bias},
      [n, c, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const Var& x = self.parents[0];
        const Var& gain = self.parents[1];
        const Var& bias = self.parents[2];
        for (int b = 0; b < n; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            const double* gy = self.grad.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
            const double* xh = xhat.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
            double sum_gy = 0.0, sum_gy_xh = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_gy += gy[i];
              sum_gy_xh += gy[i] * xh[i];
            }
            if (gain->requires_grad) gain->g()[ch] += sum_gy_xh;
            if (bias->requires_grad) bias->g()[ch] += sum_gy;
            if (x->requires_grad) {
              const double gc = gain->value[ch];
              const double is = inv_std.at(b, ch);
              const double inv_n = 1.0 / static_cast<double>(plane);
              double* gx = x->g().data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i)
                gx[i] += gc * is * (gy[i] - inv_n * sum_gy - xh[i] * inv_n * sum_gy_xh);
            }
          }
        }
      },
      "instance_norm");
}

Var avg_pool2(const Var& x) {
  require_4d(x, "avg_pool2");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial size");
  const int ho = h / 2, wo = w / 2;
  Tensor v({n, c, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j)
          v.at(b, ch, i, j) =
              0.25 * (x->value.at(b, ch, 2 * i, 2 * j) + x->value.at(b, ch, 2 * i, 2 * j + 1) +
                      x->value.at(b, ch, 2 * i + 1, 2 * j) +
                      x->value.at(b, ch, 2 * i + 1, 2 * j + 1));
  return make_node(std::move(v), {x},
                   [n, c, ho, wo](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     for (int b = 0; b < n; ++b)
                       for (int ch = 0; ch < c; ++ch)
                         for (int i = 0; i < ho; ++i)
                           for (int j = 0; j < wo; ++j) {
                             const double g = 0.25 * self.grad.at(b, ch, i, j);
                             gx.at(b, ch, 2 * i, 2 * j) += g;
                             gx.at(b, ch, 2 * i, 2 * j + 1) += g;
                             gx.at(b, ch, 2 * i + 1, 2 * j) += g;
                             gx.at(b, ch, 2 * i + 1, 2 * j + 1) += g;
                           }
                   },
                   "avg_pool2");
}

Var upsample_nearest2(const Var& x) {
  require_4d(x, "upsample_nearest2");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor v({n, c, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) v.at(b, ch, i, j) = x->value.at(b, ch, i / 2, j / 2);
  return make_node(std::move(v), {x},
                   [n, c, h, w](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     for (int b = 0; b < n; ++b)
                       for (int ch = 0; ch < c; ++ch)
                         for (int i = 0; i < 2 * h; ++i)
                           for (int j = 0; j < 2 * w; ++j)
                             gx.at(b, ch, i / 2, j / 2) += self.grad.at(b, ch, i, j);
                   },
                   "upsample_nearest2");
}

Var global_avg_pool(const Var& x) {
  require_4d(x, "global_avg_pool");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor v({n, c});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x->value.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      v.at(b, ch) = acc * inv;
    }
  return make_node(std::move(v), {x},
                   [n, c, plane, inv](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     for (int b = 0; b < n; ++b)
                       for (int ch = 0; ch < c; ++ch) {
                         const double g = self.grad.at(b, ch) * inv;
                         double* dst = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
                         for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
                       }
                   },
                   "global_avg_pool");
}

// ---------------------------------------------------------------- geometry

Var warp(const Var& image, const Var& field) {
  require_4d(image, "warp");
  require_4d(field, "warp");
  const int n = image->value.dim(0), c = image->value.dim(1);
  const int h = image->value.dim(2), w = image->value.dim(3);
  if (field->value.dim(0) != n || field->value.dim(1) != 2 || field->value.dim(2) != h ||
      field->value.dim(3) != w)
    throw std::invalid_argument("warp: field must be [n,2,h,w] matching image");
  const std::int64_t iplane = static_cast<std::int64_t>(c) * h * w;
  const std::int64_t fplane = static_cast<std::int64_t>(2) * h * w;
  Tensor v({n, c, h, w});
  for (int b = 0; b < n; ++b)
    kernels::warp_forward(image->value.data() + b * iplane, field->value.data() + b * fplane,
                          v.data() + b * iplane, c, h, w);
  return make_node(std::move(v), {image, field},
                   [n, c, h, w, iplane, fplane](Node& self) {
                     const Var& image = self.parents[0];
                     const Var& field = self.parents[1];
                     double* dimg = image->requires_grad ? image->g().data() : nullptr;
                     double* dfield = field->requires_grad ? field->g().data() : nullptr;
                     for (int b = 0; b < n; ++b)
                       kernels::warp_backward(image->value.data() + b * iplane,
                                              field->value.data() + b * fplane,
                                              self.grad.data() + b * iplane,
                                              dimg ? dimg + b * iplane : nullptr,
                                              dfield ? dfield + b * fplane : nullptr, c, h, w);
                   },
                   "warp");
}

Var grad_l2_mean(const Var& field) {
  require_4d(field, "grad_l2_mean");
  const int n = field->value.dim(0), c = field->value.dim(1);
  const int h = field->value.dim(2), w = field->value.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  double total = 0.0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* f = field->value.data() + (static_cast<std::int64_t>(b) * c + ch) * plane;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double v = f[static_cast<std::int64_t>(i) * w + j];
          if (j + 1 < w) {
            const double dx = f[static_cast<std::int64_t>(i) * w + j + 1] - v;
            total += dx * dx;
          }
          if (i + 1 < h) {
            const double dy = f[static_cast<std::int64_t>(i + 1) * w + j] - v;
            total += dy * dy;
          }
        }
    }
  const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(plane));
  return make_node(Tensor::scalar(total * inv), {field},
                   [n, c, h, w, plane, inv](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     const Tensor& fv = self.parents[0]->value;
                     Tensor& gf = self.parents[0]->g();
                     const double g = self.grad[0] * inv;
                     for (int b = 0; b < n; ++b)
                       for (int ch = 0; ch < c; ++ch) {
                         const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * plane;
                         const double* f = fv.data() + off;
                         double* d = gf.data() + off;
                         for (int i = 0; i < h; ++i)
                           for (int j = 0; j < w; ++j) {
                             const double v = f[static_cast<std::int64_t>(i) * w + j];
                             if (j + 1 < w) {
                               const double dx = f[static_cast<std::int64_t>(i) * w + j + 1] - v;
                               d[static_cast<std::int64_t>(i) * w + j + 1] += 2.0 * g * dx;
                               d[static_cast<std::int64_t>(i) * w + j] -= 2.0 * g * dx;
                             }
                             if (i + 1 < h) {
                               const double dy = f[static_cast<std::int64_t>(i + 1) * w + j] - v;
                               d[static_cast<std::int64_t>(i + 1) * w + j] += 2.0 * g * dy;
                               d[static_cast<std::int64_t>(i) * w + j] -= 2.0 * g * dy;
                             }
                           }
                       }
                   },
                   "grad_l2_mean");
}

// ---------------------------------------------------------------- k-space

namespace {

// Transforms every (re,im) channel pair of a [n,c2,h,w] tensor.
Tensor transform_pairs(const Tensor& x, bool forward) {
  if (x.ndim() != 4 || x.dim(1) % 2 != 0)
    throw std::invalid_argument("fft pairs: expected [n,2k,h,w]");
  const int n = x.dim(0), c2 = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({n, c2, h, w});
  std::vector<std::complex<double>> buf_in(static_cast<size_t>(plane));
  std::vector<std::complex<double>> buf_out(static_cast<size_t>(plane));
  for (int b = 0; b < n; ++b)
    for (int p = 0; p < c2 / 2; ++p) {
      const double* re = x.data() + (static_cast<std::int64_t>(b) * c2 + 2 * p) * plane;
      const double* im = re + plane;
      for (std::int64_t i = 0; i < plane; ++i)
        buf_in[static_cast<size_t>(i)] = {re[i], im[i]};
      if (forward)
        fft::fft2c(buf_in.data(), buf_out.data(), h, w);
      else
        fft::ifft2c(buf_in.data(), buf_out.data(), h, w);
      double* ore = out.data() + (static_cast<std::int64_t>(b) * c2 + 2 * p) * plane;
      double* oim = ore + plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        ore[i] = buf_out[static_cast<size_t>(i)].real();
        oim[i] = buf_out[static_cast<size_t>(i)].imag();
      }
    }
  return out;
}

Var fft_node(const Var& x, bool forward) {
  Tensor v = transform_pairs(x->value, forward);
  return make_node(std::move(v), {x},
                   [forward](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     // Orthonormal centered transform: the adjoint of the
                     // real-linear map is the inverse transform.
                     Tensor gx = transform_pairs(self.grad, !forward);
                     self.parents[0]->g().add_scaled(gx, 1.0);
                   },
                   forward ? "fft2c" : "ifft2c");
}

}  // namespace

Var fft2c(const Var& x) { return fft_node(x, true); }
Var ifft2c(const Var& x) { return fft_node(x, false); }

Var complex_magnitude(const Var& x, double eps) {
  require_4d(x, "complex_magnitude");
  if (x->value.dim(1) != 2) throw std::invalid_argument("complex_magnitude: expected [n,2,h,w]");
  const int n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor v({n, 1, h, w});
  for (int b = 0; b < n; ++b) {
    const double* re = x->value.data() + static_cast<std::int64_t>(b) * 2 * plane;
    const double* im = re + plane;
    double* dst = v.data() + static_cast<std::int64_t>(b) * plane;
    for (std::int64_t i = 0; i < plane; ++i) dst[i] = std::hypot(re[i], im[i]);
  }
  return make_node(std::move(v), {x},
                   [n, plane, eps](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     const Tensor& xv = self.parents[0]->value;
                     Tensor& gx = self.parents[0]->g();
                     for (int b = 0; b < n; ++b) {
                       const double* re = xv.data() + static_cast<std::int64_t>(b) * 2 * plane;
                       const double* im = re + plane;
                       const double* m = self.value.data() + static_cast<std::int64_t>(b) * plane;
                       const double* g = self.grad.data() + static_cast<std::int64_t>(b) * plane;
                       double* gre = gx.data() + static_cast<std::int64_t>(b) * 2 * plane;
                       double* gim = gre + plane;
                       for (std::int64_t i = 0; i < plane; ++i) {
                         const double denom = std::max(m[i], eps);
                         gre[i] += g[i] * re[i] / denom;
                         gim[i] += g[i] * im[i] / denom;
                       }
                     }
                   },
                   "complex_magnitude");
}

Var data_consistency(const Var& k, const Tensor& y, const std::vector<char>& mask_cols,
                     const Var& weight) {
  require_4d(k, "data_consistency");
  if (!k->value.same_shape(y)) throw std::invalid_argument("data_consistency: k/y shape mismatch");
  const int w = k->value.dim(3);
  if (static_cast<int>(mask_cols.size()) != w)
    throw std::invalid_argument("data_consistency: mask width mismatch");
  if (weight->value.numel() != 1) throw std::invalid_argument("data_consistency: scalar weight");
  const double wv = weight->value[0];
  const std::int64_t rows = k->value.numel() / w;
  Tensor v = k->value;
  // (1-w)*k + w*y on sampled columns evaluates to exactly y at w=1 and
  // exactly k at w=0.
  for (std::int64_t r = 0; r < rows; ++r) {
    double* dst = v.data() + r * w;
    const double* ysrc = y.data() + r * w;
    for (int col = 0; col < w; ++col)
      if (mask_cols[static_cast<size_t>(col)])
        dst[col] = (1.0 - wv) * dst[col] + wv * ysrc[col];
  }
  return make_node(std::move(v), {k, weight},
                   [y, mask_cols, wv, rows, w](Node& self) {
                     const Var& k = self.parents[0];
                     const Var& weight = self.parents[1];
                     if (k->requires_grad) {
                       Tensor& gk = k->g();
                       for (std::int64_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * w;
                         double* dst = gk.data() + r * w;
                         for (int col = 0; col < w; ++col)
                           dst[col] += mask_cols[static_cast<size_t>(col)] ? (1.0 - wv) * g[col]
                                                                           : g[col];
                       }
                     }
                     if (weight->requires_grad) {
                       double acc = 0.0;
                       const Tensor& kv = k->value;
                       for (std::int64_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * w;
                         const double* ysrc = y.data() + r * w;
                         const double* ksrc = kv.data() + r * w;
                         for (int col = 0; col < w; ++col)
                           if (mask_cols[static_cast<size_t>(col)])
                             acc += g[col] * (ysrc[col] - ksrc[col]);
                       }
                       weight->g()[0] += acc;
                     }
                   },
                   "data_consistency");
}

Var rank1_sigma(const Var& w, const Tensor& u, const Tensor& v, int rows, int cols) {
  if (w->value.numel() != static_cast<std::int64_t>(rows) * cols)
    throw std::invalid_argument("rank1_sigma: size mismatch");
  if (u.numel() != rows || v.numel() != cols)
    throw std::invalid_argument("rank1_sigma: u/v size mismatch");
  double sigma = 0.0;
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = w->value.data() + static_cast<std::int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += wr[c] * v[c];
    sigma += u[r] * acc;
  }
  return make_node(Tensor::scalar(sigma), {w},
                   [u, v, rows, cols](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gw = self.parents[0]->g();
                     const double g = self.grad[0];
                     for (int r = 0; r < rows; ++r) {
                       double* dst = gw.data() + static_cast<std::int64_t>(r) * cols;
                       const double gu = g * u[r];
                       for (int c = 0; c < cols; ++c) dst[c] += gu * v[c];
                     }
                   },
                   "rank1_sigma");
}

Var complex_mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "complex_mul");
  require_4d(a, "complex_mul");
  if (a->value.dim(1) != 2) throw std::invalid_argument("complex_mul: expected [n,2,h,w]");
  const int n = a->value.dim(0), h = a->value.dim(2), w = a->value.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({n, 2, h, w});
  for (int bb = 0; bb < n; ++bb) {
    const std::int64_t off = static_cast<std::int64_t>(bb) * 2 * plane;
    const double *ar = a->value.data() + off, *ai = ar + plane;
    const double *br = b->value.data() + off, *bi = br + plane;
    double *orr = out.data() + off, *oi = orr + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      orr[i] = ar[i] * br[i] - ai[i] * bi[i];
      oi[i] = ar[i] * bi[i] + ai[i] * br[i];
    }
  }
  return make_node(std::move(out), {a, b},
                   [n, plane](Node& self) {
                     const Tensor& av = self.parents[0]->value;
                     const Tensor& bv = self.parents[1]->value;
                     for (int bb = 0; bb < n; ++bb) {
                       const std::int64_t off = static_cast<std::int64_t>(bb) * 2 * plane;
                       const double *gr = self.grad.data() + off, *gi = gr + plane;
                       // d/da = conj(b) * g, d/db = conj(a) * g
                       if (self.parents[0]->requires_grad) {
                         double* gar = self.parents[0]->g().data() + off;
                         double* gai = gar + plane;
                         const double *br = bv.data() + off, *bi = br + plane;
                         for (std::int64_t i = 0; i < plane; ++i) {
                           gar[i] += gr[i] * br[i] + gi[i] * bi[i];
                           gai[i] += -gr[i] * bi[i] + gi[i] * br[i];
                         }
                       }
                       if (self.parents[1]->requires_grad) {
                         double* gbr = self.parents[1]->g().data() + off;
                         double* gbi = gbr + plane;
                         const double *ar = av.data() + off, *ai = ar + plane;
                         for (std::int64_t i = 0; i < plane; ++i) {
                           gbr[i] += gr[i] * ar[i] + gi[i] * ai[i];
                           gbi[i] += -gr[i] * ai[i] + gi[i] * ar[i];
                         }
                       }
                     }
                   },
                   "complex_mul");
}

Var coil_reduce(const Var& x, const Tensor& maps) {
  require_4d(x, "coil_reduce");
  if (maps.ndim() != 4) throw std::invalid_argument("coil_reduce: maps must be [coils,2,h,w]");
  const int coils = maps.dim(0), h = maps.dim(2), w = maps.dim(3);
  if (x->value.dim(0) != 1 || x->value.dim(1) != 2 * coils || x->value.dim(2) != h ||
      x->value.dim(3) != w)
    throw std::invalid_argument("coil_reduce: x must be [1,2*coils,h,w]");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({1, 2, h, w});
  double* orr = out.data();
  double* oi = orr + plane;
  for (int c = 0; c < coils; ++c) {
    const double* sr = maps.data() + static_cast<std::int64_t>(c) * 2 * plane;
    const double* si = sr + plane;
    const double* xr = x->value.data() + static_cast<std::int64_t>(c) * 2 * plane;
    const double* xi = xr + plane;
    // conj(S) * x
    for (std::int64_t i = 0; i < plane; ++i) {
      orr[i] += sr[i] * xr[i] + si[i] * xi[i];
      oi[i] += sr[i] * xi[i] - si[i] * xr[i];
    }
  }
  return make_node(std::move(out), {x},
                   [maps, coils, plane](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     const double* gr = self.grad.data();
                     const double* gi = gr + plane;
                     for (int c = 0; c < coils; ++c) {
                       const double* sr = maps.data() + static_cast<std::int64_t>(c) * 2 * plane;
                       const double* si = sr + plane;
                       double* dr = gx.data() + static_cast<std::int64_t>(c) * 2 * plane;
                       double* di = dr + plane;
                       // dx_c = S_c * g
                       for (std::int64_t i = 0; i < plane; ++i) {
                         dr[i] += sr[i] * gr[i] - si[i] * gi[i];
                         di[i] += sr[i] * gi[i] + si[i] * gr[i];
                       }
                     }
                   },
                   "coil_reduce");
}

Var coil_expand(const Var& x, const Tensor& maps) {
  require_4d(x, "coil_expand");
  if (maps.ndim() != 4) throw std::invalid_argument("coil_expand: maps must be [coils,2,h,w]");
  const int coils = maps.dim(0), h = maps.dim(2), w = maps.dim(3);
  if (x->value.dim(0) != 1 || x->value.dim(1) != 2 || x->value.dim(2) != h || x->value.dim(3) != w)
    throw std::invalid_argument("coil_expand: x must be [1,2,h,w]");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({1, 2 * coils, h, w});
  const double* xr = x->value.data();
  const double* xi = xr + plane;
  for (int c = 0; c < coils; ++c) {
    const double* sr = maps.data() + static_cast<std::int64_t>(c) * 2 * plane;
    const double* si = sr + plane;
    double* orr = out.data() + static_cast<std::int64_t>(c) * 2 * plane;
    double* oi = orr + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      orr[i] = sr[i] * xr[i] - si[i] * xi[i];
      oi[i] = sr[i] * xi[i] + si[i] * xr[i];
    }
  }
  return make_node(std::move(out), {x},
                   [maps, coils, plane](Node& self) {
                     if (!self.parents[0]->requires_grad) return;
                     Tensor& gx = self.parents[0]->g();
                     double* dr = gx.data();
                     double* di = dr + plane;
                     for (int c = 0; c < coils; ++c) {
                       const double* sr = maps.data() + static_cast<std::int64_t>(c) * 2 * plane;
                       const double* si = sr + plane;
                       const double* gr = self.grad.data() + static_cast<std::int64_t>(c) * 2 * plane;
                       const double* gi = gr + plane;
                       // dx += conj(S_c) * g_c
                       for (std::int64_t i = 0; i < plane; ++i) {
                         dr[i] += sr[i] * gr[i] + si[i] * gi[i];
                         di[i] += sr[i] * gi[i] - si[i] * gr[i];
                       }
                     }
                   },
                   "coil_expand");
}

}  // namespace mmalign::ag
