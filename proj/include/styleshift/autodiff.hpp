#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "styleshift/errors.hpp"
#include "styleshift/tensor.hpp"

// Reverse-mode automatic differentiation over Tensor<T>. The graph is dynamic:
// every forward pass builds fresh op nodes that reference persistent parameter
// nodes, and backward() walks the DAG once in reverse topological order.
// Ownership runs child -> parent only, so dropping the loss Var frees the
// whole graph while parameters survive in their owning model structs.
namespace styleshift::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;  // reads this->grad, accumulates into parents
  std::string name;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    if (!grad.same_shape(g)) throw InputError("gradient shape mismatch for " + name);
    grad.as_vector() += g.as_vector();
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    node_ = std::make_shared<Node<T>>();
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return defined() && !node_->grad.empty(); }
  bool requires_grad() const { return defined() && node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.zero();
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value, std::string name) {
  return Var<T>(std::move(value), true, std::move(name));
}

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_result(Tensor<T> value,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

}  // namespace detail

// Runs one reverse sweep from a scalar loss. Parameter gradients accumulate
// across calls until zeroed, which is what minibatch accumulation wants; op
// nodes are fresh per forward pass so their grads start empty.
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().numel() != 1)
    throw InputError("backward expects a defined scalar loss");

  // Iterative DFS post-order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor<T>({1}, T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value())) throw InputError("add: shape mismatch");
  Tensor<T> out(a.value().shape());
  out.as_vector() = a.value().as_vector() + b.value().as_vector();
  auto n = detail::make_result(std::move(out), {a.node(), b.node()});
  n->backprop = [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value())) throw InputError("sub: shape mismatch");
  Tensor<T> out(a.value().shape());
  out.as_vector() = a.value().as_vector() - b.value().as_vector();
  auto n = detail::make_result(std::move(out), {a.node(), b.node()});
  n->backprop = [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor<T> g(self.grad.shape());
      g.as_vector() = -self.grad.as_vector();
      self.parents[1]->accumulate(g);
    }
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value())) throw InputError("mul: shape mismatch");
  Tensor<T> out(a.value().shape());
  out.as_vector() = a.value().as_vector().cwiseProduct(b.value().as_vector());
  auto n = detail::make_result(std::move(out), {a.node(), b.node()});
  n->backprop = [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      Tensor<T> g(self.grad.shape());
      g.as_vector() = self.grad.as_vector().cwiseProduct(self.parents[1]->value.as_vector());
      self.parents[0]->accumulate(g);
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T> g(self.grad.shape());
      g.as_vector() = self.grad.as_vector().cwiseProduct(self.parents[0]->value.as_vector());
      self.parents[1]->accumulate(g);
    }
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.value().shape());
  out.as_vector() = a.value().as_vector() * s;
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [s](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.grad.shape());
    g.as_vector() = self.grad.as_vector() * s;
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  Tensor<T> out = a.value().reshaped(shape);
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape()));
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T alpha) {
  Tensor<T> out(a.value().shape());
  for (long i = 0; i < out.numel(); ++i) {
    T v = a.value()[i];
    out[i] = v >= T(0) ? v : alpha * v;
  }
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [alpha](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.grad.shape());
    const Tensor<T>& x = self.parents[0]->value;
    for (long i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * (x[i] >= T(0) ? T(1) : alpha);
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> tanh_act(const Var<T>& a) {
  Tensor<T> out(a.value().shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(a.value()[i]);
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.grad.shape());
    for (long i = 0; i < g.numel(); ++i) {
      T y = self.value[i];
      g[i] = self.grad[i] * (T(1) - y * y);
    }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

// Numerically stable log(1 + exp(x)).
template <typename T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out(a.value().shape());
  for (long i = 0; i < out.numel(); ++i) {
    T x = a.value()[i];
    out[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.grad.shape());
    const Tensor<T>& x = self.parents[0]->value;
    for (long i = 0; i < g.numel(); ++i) {
      T s = T(1) / (T(1) + std::exp(-x[i]));
      g[i] = self.grad[i] * s;
    }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out({1}, static_cast<T>(a.value().as_vector().template cast<double>().sum()));
  auto n = detail::make_result(std::move(out), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape(), self.grad[0]);
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  double s = 0;
  for (long i = 0; i < a.value().numel(); ++i) {
    double v = static_cast<double>(a.value()[i]);
    s += v * v;
  }
  auto n = detail::make_result(Tensor<T>({1}, static_cast<T>(s)), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape());
    T go = self.grad[0];
    const Tensor<T>& x = self.parents[0]->value;
    for (long i = 0; i < g.numel(); ++i) g[i] = go * T(2) * x[i];
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

// Sum of absolute values. Subgradient at 0 is taken as 0.
template <typename T>
Var<T> sum_abs(const Var<T>& a) {
  double s = 0;
  for (long i = 0; i < a.value().numel(); ++i) s += std::abs(static_cast<double>(a.value()[i]));
  auto n = detail::make_result(Tensor<T>({1}, static_cast<T>(s)), {a.node()});
  n->backprop = [](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape());
    T go = self.grad[0];
    const Tensor<T>& x = self.parents[0]->value;
    for (long i = 0; i < g.numel(); ++i)
      g[i] = x[i] > T(0) ? go : (x[i] < T(0) ? -go : T(0));
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(n);
}

// ---------------------------------------------------------------------------
// Linear layers

// x: [N, Fin], w: [Fout, Fin], b: [Fout] (pass an undefined Var to skip bias).
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int N = x.value().dim(0), Fin = x.value().dim(1), Fout = w.value().dim(0);
  if (w.value().dim(1) != Fin) throw InputError("dense: weight/input dim mismatch");
  Tensor<T> out({N, Fout});
  out.as_matrix(N, Fout).noalias() =
      x.value().as_matrix(N, Fin) * w.value().as_matrix(Fout, Fin).transpose();
  if (b.defined()) {
    auto bv = b.value().as_vector();
    auto om = out.as_matrix(N, Fout);
    om.rowwise() += bv.transpose();
  }
  std::vector<std::shared_ptr<Node<T>>> parents = {x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto n = detail::make_result(std::move(out), std::move(parents));
  n->backprop = [N, Fin, Fout](Node<T>& self) {
    auto dY = self.grad.as_matrix(N, Fout);
    auto& xn = self.parents[0];
    auto& wn = self.parents[1];
    if (xn->requires_grad) {
      Tensor<T> gx({N, Fin});
      gx.as_matrix(N, Fin).noalias() = dY * wn->value.as_matrix(Fout, Fin);
      xn->accumulate(gx);
    }
    if (wn->requires_grad) {
      Tensor<T> gw({Fout, Fin});
      gw.as_matrix(Fout, Fin).noalias() = dY.transpose() * xn->value.as_matrix(N, Fin);
      wn->accumulate(gw);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor<T> gb({Fout});
      gb.as_vector() = dY.colwise().sum().transpose();
      self.parents[2]->accumulate(gb);
    }
  };
  return Var<T>::from_node(n);
}

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col is [C*kh*kw, Ho*Wo] row-major. Out-of-bounds taps are zero.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) *
                           static_cast<std::size_t>(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = T(0);
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) *
                                 static_cast<std::size_t>(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [N, Ci, H, W], w: [Co, Ci, kh, kw], b: [Co] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int pad = -1) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  if (xs.size() != 4 || ws.size() != 4) throw InputError("conv2d: rank must be 4");
  const int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const int Co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != Ci) throw InputError("conv2d: channel mismatch");
  if (pad < 0) pad = kh / 2;  // "same" padding for odd kernels, stride 1
  const int Ho = detail::conv_out_dim(H, kh, stride, pad);
  const int Wo = detail::conv_out_dim(W, kw, stride, pad);
  const int K = Ci * kh * kw;

  Tensor<T> out({N, Co, Ho, Wo});
  Tensor<T> col({K, Ho * Wo});
  auto wm = w.value().as_matrix(Co, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W,
                    kh, kw, stride, pad, Ho, Wo, col.data());
    typename Tensor<T>::MatrixMap om(out.data() + static_cast<std::size_t>(n) * Co * Ho * Wo,
                                     Co, Ho * Wo);
    om.noalias() = wm * col.as_matrix(K, Ho * Wo);
    if (b.defined()) om.colwise() += b.value().as_vector();
  }

  std::vector<std::shared_ptr<Node<T>>> parents = {x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto n = detail::make_result(std::move(out), std::move(parents));
  n->backprop = [N, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K](Node<T>& self) {
    auto& xn = self.parents[0];
    auto& wn = self.parents[1];
    Tensor<T> col({K, Ho * Wo});
    Tensor<T> gw;
    if (wn->requires_grad) gw = Tensor<T>({Co, Ci, kh, kw});
    Tensor<T> gx;
    if (xn->requires_grad) gx = Tensor<T>({N, Ci, H, W});
    Tensor<T> dcol({K, Ho * Wo});
    for (int n2 = 0; n2 < N; ++n2) {
      typename Tensor<T>::ConstMatrixMap dY(
          self.grad.data() + static_cast<std::size_t>(n2) * Co * Ho * Wo, Co, Ho * Wo);
      if (wn->requires_grad || xn->requires_grad) {
        if (wn->requires_grad) {
          detail::im2col(xn->value.data() + static_cast<std::size_t>(n2) * Ci * H * W, Ci,
                          H, W, kh, kw, stride, pad, Ho, Wo, col.data());
          gw.as_matrix(Co, K).noalias() += dY * col.as_matrix(K, Ho * Wo).transpose();
        }
        if (xn->requires_grad) {
          dcol.as_matrix(K, Ho * Wo).noalias() =
              wn->value.as_matrix(Co, K).transpose() * dY;
          detail::col2im_add(dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                              gx.data() + static_cast<std::size_t>(n2) * Ci * H * W);
        }
      }
    }
    if (wn->requires_grad) wn->accumulate(gw);
    if (xn->requires_grad) xn->accumulate(gx);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor<T> gb({Co});
      for (int n2 = 0; n2 < N; ++n2) {
        typename Tensor<T>::ConstMatrixMap dY(
            self.grad.data() + static_cast<std::size_t>(n2) * Co * Ho * Wo, Co, Ho * Wo);
        gb.as_vector() += dY.rowwise().sum();
      }
      self.parents[2]->accumulate(gb);
    }
  };
  return Var<T>::from_node(n);
}

// ---------------------------------------------------------------------------
// Spatial resampling

template <typename T>
Var<T> upsample2_nearest(const Var<T>& x) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out({N, C, H * 2, W * 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          T v = x.value().at(n, c, y, xx);
          out.at(n, c, 2 * y, 2 * xx) = v;
          out.at(n, c, 2 * y, 2 * xx + 1) = v;
          out.at(n, c, 2 * y + 1, 2 * xx) = v;
          out.at(n, c, 2 * y + 1, 2 * xx + 1) = v;
        }
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, C, H, W](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g({N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            g.at(n, c, y, xx) = self.grad.at(n, c, 2 * y, 2 * xx) +
                                self.grad.at(n, c, 2 * y, 2 * xx + 1) +
                                self.grad.at(n, c, 2 * y + 1, 2 * xx) +
                                self.grad.at(n, c, 2 * y + 1, 2 * xx + 1);
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 2 || W % 2) throw InputError("avg_pool2: odd spatial size");
  Tensor<T> out({N, C, H / 2, W / 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H / 2; ++y)
        for (int xx = 0; xx < W / 2; ++xx)
          out.at(n, c, y, xx) =
              (x.value().at(n, c, 2 * y, 2 * xx) + x.value().at(n, c, 2 * y, 2 * xx + 1) +
               x.value().at(n, c, 2 * y + 1, 2 * xx) +
               x.value().at(n, c, 2 * y + 1, 2 * xx + 1)) *
              T(0.25);
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, C, H, W](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g({N, C, H, W});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H / 2; ++y)
          for (int xx = 0; xx < W / 2; ++xx) {
            T v = self.grad.at(n, c, y, xx) * T(0.25);
            g.at(n, c, 2 * y, 2 * xx) = v;
            g.at(n, c, 2 * y, 2 * xx + 1) = v;
            g.at(n, c, 2 * y + 1, 2 * xx) = v;
            g.at(n, c, 2 * y + 1, 2 * xx + 1) = v;
          }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0;
      const T* p = x.value().data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) acc += static_cast<double>(p[i]);
      out.at(n, c) = static_cast<T>(acc / HW);
    }
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, C, HW](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape());
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T v = self.grad.at(n, c) / static_cast<T>(HW);
        T* p = g.data() + (static_cast<std::size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) p[i] = v;
      }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Normalization and style modulation

// Per-sample, per-channel normalization over the spatial extent (population
// variance). This is the "IN" half of adaptive instance normalization.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-8)) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out(s);
  Tensor<T> means({N, C});
  Tensor<T> inv_std({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = x.value().data() + (static_cast<std::size_t>(n) * C + c) * HW;
      double m = 0;
      for (int i = 0; i < HW; ++i) m += static_cast<double>(p[i]);
      m /= HW;
      double v = 0;
      for (int i = 0; i < HW; ++i) {
        double d = static_cast<double>(p[i]) - m;
        v += d * d;
      }
      v /= HW;
      T istd = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      means.at(n, c) = static_cast<T>(m);
      inv_std.at(n, c) = istd;
      T* q = out.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) q[i] = (p[i] - static_cast<T>(m)) * istd;
    }
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, C, HW, means, inv_std](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape());
    const Tensor<T>& x = self.parents[0]->value;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
        const T* xp = x.data() + off;
        const T* dy = self.grad.data() + off;
        T* gp = g.data() + off;
        const T m = means.at(n, c), istd = inv_std.at(n, c);
        // dL/dx = istd * (dy - mean(dy) - xhat * mean(dy * xhat))
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int i = 0; i < HW; ++i) {
          double xhat = static_cast<double>((xp[i] - m) * istd);
          sum_dy += static_cast<double>(dy[i]);
          sum_dy_xhat += static_cast<double>(dy[i]) * xhat;
        }
        double mean_dy = sum_dy / HW, mean_dy_xhat = sum_dy_xhat / HW;
        for (int i = 0; i < HW; ++i) {
          double xhat = static_cast<double>((xp[i] - m) * istd);
          gp[i] = static_cast<T>(static_cast<double>(istd) *
                                 (static_cast<double>(dy[i]) - mean_dy - xhat * mean_dy_xhat));
        }
      }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

// y[n,c,:,:] = x[n,c,:,:] * (1 + scale[n,c]) + bias[n,c]. The style affine of
// AdaIN; the +1 keeps the identity modulation at zero style.
template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& sc, const Var<T>& bias) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  if (sc.value().shape() != std::vector<int>{N, C} ||
      bias.value().shape() != std::vector<int>{N, C})
    throw InputError("channel_affine: scale/bias must be [N,C]");
  Tensor<T> out(s);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T a = T(1) + sc.value().at(n, c), b = bias.value().at(n, c);
      const T* p = x.value().data() + off;
      T* q = out.data() + off;
      for (int i = 0; i < HW; ++i) q[i] = p[i] * a + b;
    }
  auto node = detail::make_result(std::move(out), {x.node(), sc.node(), bias.node()});
  node->backprop = [N, C, HW](Node<T>& self) {
    auto& xn = self.parents[0];
    auto& sn = self.parents[1];
    auto& bn = self.parents[2];
    Tensor<T> gx, gs, gb;
    if (xn->requires_grad) gx = Tensor<T>(xn->value.shape());
    if (sn->requires_grad) gs = Tensor<T>({N, C});
    if (bn->requires_grad) gb = Tensor<T>({N, C});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
        const T* dy = self.grad.data() + off;
        const T* xp = xn->value.data() + off;
        const T a = T(1) + sn->value.at(n, c);
        double sdy = 0, sdyx = 0;
        for (int i = 0; i < HW; ++i) {
          sdy += static_cast<double>(dy[i]);
          sdyx += static_cast<double>(dy[i]) * static_cast<double>(xp[i]);
        }
        if (xn->requires_grad) {
          T* gp = gx.data() + off;
          for (int i = 0; i < HW; ++i) gp[i] = dy[i] * a;
        }
        if (sn->requires_grad) gs.at(n, c) = static_cast<T>(sdyx);
        if (bn->requires_grad) gb.at(n, c) = static_cast<T>(sdy);
      }
    if (xn->requires_grad) xn->accumulate(gx);
    if (sn->requires_grad) sn->accumulate(gs);
    if (bn->requires_grad) bn->accumulate(gb);
  };
  return Var<T>::from_node(node);
}

// y[n,c,:,:] = x[n,c,:,:] + strength[c] * noise[n,0,:,:]. noise is a fixed
// tensor, never optimized.
template <typename T>
Var<T> noise_inject(const Var<T>& x, const Var<T>& strength, const Tensor<T>& noise) {
  const auto& s = x.value().shape();
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  if (noise.shape() != std::vector<int>{N, 1, s[2], s[3]})
    throw InputError("noise_inject: noise must be [N,1,H,W]");
  if (strength.value().shape() != std::vector<int>{C})
    throw InputError("noise_inject: strength must be [C]");
  Tensor<T> out(s);
  for (int n = 0; n < N; ++n) {
    const T* np = noise.data() + static_cast<std::size_t>(n) * HW;
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T w = strength.value().at(c);
      const T* p = x.value().data() + off;
      T* q = out.data() + off;
      for (int i = 0; i < HW; ++i) q[i] = p[i] + w * np[i];
    }
  }
  auto node = detail::make_result(std::move(out), {x.node(), strength.node()});
  node->backprop = [N, C, HW, noise](Node<T>& self) {
    auto& xn = self.parents[0];
    auto& sn = self.parents[1];
    if (xn->requires_grad) xn->accumulate(self.grad);
    if (sn->requires_grad) {
      Tensor<T> gs({C});
      for (int n = 0; n < N; ++n) {
        const T* np = noise.data() + static_cast<std::size_t>(n) * HW;
        for (int c = 0; c < C; ++c) {
          const T* dy = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * HW;
          double acc = 0;
          for (int i = 0; i < HW; ++i) acc += static_cast<double>(dy[i]) * np[i];
          gs.at(c) += static_cast<T>(acc);
        }
      }
      sn->accumulate(gs);
    }
  };
  return Var<T>::from_node(node);
}

// Repeats a [C,H,W] tensor across a batch dimension. Backward sums over the
// batch. Used for the learned constant input of the synthesis network.
template <typename T>
Var<T> tile_batch(const Var<T>& x, int N) {
  const auto& s = x.value().shape();
  if (s.size() != 3) throw InputError("tile_batch: rank must be 3");
  const long sz = x.value().numel();
  Tensor<T> out({N, s[0], s[1], s[2]});
  for (int n = 0; n < N; ++n)
    std::copy(x.value().data(), x.value().data() + sz,
              out.data() + static_cast<std::size_t>(n) * sz);
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, sz](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g(self.parents[0]->value.shape());
    for (int n = 0; n < N; ++n) {
      const T* src = self.grad.data() + static_cast<std::size_t>(n) * sz;
      for (long i = 0; i < sz; ++i) g[i] += src[i];
    }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

// Columns [c0, c1) of a [N, F] tensor.
template <typename T>
Var<T> slice_cols(const Var<T>& x, int c0, int c1) {
  const int N = x.value().dim(0), F = x.value().dim(1);
  if (c0 < 0 || c1 > F || c0 >= c1) throw InputError("slice_cols: bad range");
  const int C = c1 - c0;
  Tensor<T> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) out.at(n, c) = x.value().at(n, c0 + c);
  auto node = detail::make_result(std::move(out), {x.node()});
  node->backprop = [N, F, c0, C](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g({N, F});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) g.at(n, c0 + c) = self.grad.at(n, c);
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Classification loss

// Weighted-mean softmax cross entropy. labels[n] in [0, K); weights empty
// means uniform. Returns a scalar.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels,
                             const std::vector<T>& weights = {}) {
  const int N = logits.value().dim(0), K = logits.value().dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw InputError("softmax_cross_entropy: label count mismatch");
  Tensor<T> probs({N, K});
  double loss = 0, wsum = 0;
  for (int n = 0; n < N; ++n) {
    const T* l = logits.value().data() + static_cast<std::size_t>(n) * K;
    T mx = l[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, l[k]);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(l[k] - mx));
    double w = weights.empty() ? 1.0 : static_cast<double>(weights[static_cast<std::size_t>(n)]);
    for (int k = 0; k < K; ++k)
      probs.at(n, k) = static_cast<T>(std::exp(static_cast<double>(l[k] - mx)) / z);
    loss += w * (std::log(z) - static_cast<double>(l[labels[static_cast<std::size_t>(n)]] - mx));
    wsum += w;
  }
  loss /= wsum;
  auto node = detail::make_result(Tensor<T>({1}, static_cast<T>(loss)), {logits.node()});
  node->backprop = [N, K, probs, labels, weights, wsum](Node<T>& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor<T> g({N, K});
    T go = self.grad[0];
    for (int n = 0; n < N; ++n) {
      double w = weights.empty() ? 1.0 : static_cast<double>(weights[static_cast<std::size_t>(n)]);
      T f = static_cast<T>(w / wsum) * go;
      for (int k = 0; k < K; ++k) {
        T p = probs.at(n, k);
        g.at(n, k) = f * (p - (k == labels[static_cast<std::size_t>(n)] ? T(1) : T(0)));
      }
    }
    self.parents[0]->accumulate(g);
  };
  return Var<T>::from_node(node);
}

// Softmax probabilities of a logits tensor, forward only (no graph).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const int N = logits.dim(0), K = logits.dim(1);
  Tensor<T> out({N, K});
  for (int n = 0; n < N; ++n) {
    const T* l = logits.data() + static_cast<std::size_t>(n) * K;
    T mx = l[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, l[k]);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(l[k] - mx));
    for (int k = 0; k < K; ++k)
      out.at(n, k) = static_cast<T>(std::exp(static_cast<double>(l[k] - mx)) / z);
  }
  return out;
}

}  // namespace styleshift::ad
