#pragma once

#include <functional>
#include <memory>
#include <unordered_map>

#include "stmbr/ops.hpp"

namespace stmbr {

/// One node of the dynamically recorded computation graph. Parameters are
/// long-lived leaf nodes; every forward pass builds fresh interior nodes that
/// reference them, so gradients accumulate in place on the leaves.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first contribution
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  void add_grad(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape);
    if (g.shape != grad.shape) throw std::invalid_argument("gradient shape mismatch at op " + std::string(op));
    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
  }

  const Tensor<T>& grad_or_zeros() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape);
    return grad;
  }

  void zero_grad() { grad = Tensor<T>{}; }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, const char* op, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

// Iterative post-order topological sort; rejects cycles and ensures the
// forward record is complete.
template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_map<Node<T>*, int> mark;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
  mark[root.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (!p) continue;
      const int m = mark[p];
      if (m == 1) throw std::runtime_error("backward: cycle in graph");
      if (m == 0) {
        mark[p] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      mark[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar loss. Leaves keep whatever
/// gradient was already accumulated (call zero_grad between steps).
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss->value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->requires_grad) throw std::runtime_error("backward: missing forward record");
  auto order = detail::topo_order(loss);
  loss->add_grad(Tensor<T>::scalar(T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Tape ops. Each wraps the plain kernel in ops.hpp and registers the matching
// gradient. `b` may be null where bias is optional.

template <typename T>
Var<T> vconv2d(const Var<T>& x, const Var<T>& k, const Var<T>& b, int stride, int dilation,
               Pad pad) {
  Tensor<T> out = conv2d(x->value, k->value, b ? b->value : Tensor<T>{}, stride, dilation, pad);
  return detail::make_op<T>(std::move(out), "conv2d", {x, k, b},
                            [x, k, b, stride, dilation, pad](Node<T>& self) {
                              Tensor<T> gx, gk, gb;
                              conv2d_backward(x->value, k->value, stride, dilation, pad, self.grad,
                                              x->requires_grad ? &gx : nullptr,
                                              k->requires_grad ? &gk : nullptr,
                                              (b && b->requires_grad) ? &gb : nullptr);
                              if (x->requires_grad) x->add_grad(gx);
                              if (k->requires_grad) k->add_grad(gk);
                              if (b && b->requires_grad) b->add_grad(gb);
                            });
}

template <typename T>
Var<T> vconv2d(const Var<T>& x, const Var<T>& k, const Var<T>& b, const Pad& pad) {
  return vconv2d(x, k, b, 1, 1, pad);
}

template <typename T>
struct VarPool {
  Var<T> out;
  PoolIndices indices;
};

template <typename T>
VarPool<T> vmax_pool(const Var<T>& x, int window, int stride, Pad pad = {}) {
  auto res = pool2d(x->value, window, stride, PoolMode::kMax, pad);
  auto indices = res.indices;
  auto in_shape = x->value.shape;
  Var<T> out = detail::make_op<T>(std::move(res.out), "max_pool", {x},
                                  [x, indices, in_shape](Node<T>& self) {
                                    x->add_grad(max_pool_backward<T>(in_shape, indices, self.grad));
                                  });
  return {out, std::move(indices)};
}

template <typename T>
Var<T> vavg_pool(const Var<T>& x, int window, int stride, Pad pad = {}) {
  auto res = pool2d(x->value, window, stride, PoolMode::kAvg, pad);
  auto in_shape = x->value.shape;
  return detail::make_op<T>(std::move(res.out), "avg_pool", {x},
                            [x, window, stride, pad, in_shape](Node<T>& self) {
                              x->add_grad(avg_pool_backward<T>(in_shape, window, stride, pad, self.grad));
                            });
}

template <typename T>
Var<T> vmax_unpool(const Var<T>& values, const PoolIndices& indices, std::vector<int> out_shape) {
  Tensor<T> out = max_unpool2d(values->value, indices, out_shape);
  return detail::make_op<T>(std::move(out), "max_unpool", {values},
                            [values, indices](Node<T>& self) {
                              values->add_grad(max_unpool2d_backward<T>(indices, self.grad));
                            });
}

template <typename T>
Var<T> vconcat(const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p->value);
  Tensor<T> out = concat_channels(ptrs);
  return detail::make_op<T>(std::move(out), "concat",
                            std::vector<Var<T>>(parts.begin(), parts.end()),
                            [parts](Node<T>& self) {
                              int c0 = 0;
                              for (const auto& p : parts) {
                                const int c1 = c0 + p->value.shape[1];
                                if (p->requires_grad) p->add_grad(slice_channels(self.grad, c0, c1));
                                c0 = c1;
                              }
                            });
}

template <typename T>
Var<T> vdense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  Tensor<T> out = dense(x->value, w->value, b ? b->value : Tensor<T>{});
  return detail::make_op<T>(std::move(out), "dense", {x, w, b}, [x, w, b](Node<T>& self) {
    Tensor<T> gx, gw, gb;
    dense_backward(x->value, w->value, self.grad, x->requires_grad ? &gx : nullptr,
                   w->requires_grad ? &gw : nullptr, (b && b->requires_grad) ? &gb : nullptr);
    if (x->requires_grad) x->add_grad(gx);
    if (w->requires_grad) w->add_grad(gw);
    if (b && b->requires_grad) b->add_grad(gb);
  });
}

template <typename T>
Var<T> vsoftmax_rows(const Var<T>& logits) {
  Tensor<T> p = softmax_rows(logits->value);
  return detail::make_op<T>(std::move(p), "softmax", {logits}, [logits](Node<T>& self) {
    logits->add_grad(softmax_rows_backward(self.value, self.grad));
  });
}

template <typename T>
Var<T> vsoftmax_channels(const Var<T>& logits) {
  Tensor<T> p = softmax_channels(logits->value);
  return detail::make_op<T>(std::move(p), "softmax_channels", {logits}, [logits](Node<T>& self) {
    logits->add_grad(softmax_channels_backward(self.value, self.grad));
  });
}

template <typename T>
Var<T> vrelu(const Var<T>& x) {
  Tensor<T> out = activation(x->value, Activation::kRelu);
  return detail::make_op<T>(std::move(out), "relu", {x}, [x](Node<T>& self) {
    x->add_grad(relu_backward(x->value, self.grad));
  });
}

template <typename T>
Var<T> vsigmoid(const Var<T>& x) {
  Tensor<T> out = activation(x->value, Activation::kSigmoid);
  return detail::make_op<T>(std::move(out), "sigmoid", {x}, [x](Node<T>& self) {
    x->add_grad(sigmoid_backward(self.value, self.grad));
  });
}

template <typename T>
Var<T> vdropout(const Var<T>& x, double rate, Rng& rng, bool training) {
  auto res = dropout(x->value, rate, rng, training);
  auto kept = std::make_shared<std::vector<uint8_t>>(std::move(res.kept));
  return detail::make_op<T>(std::move(res.out), "dropout", {x}, [x, kept, rate](Node<T>& self) {
    x->add_grad(dropout_backward(*kept, rate, self.grad));
  });
}

template <typename T>
Var<T> vglobal_avg_pool(const Var<T>& x) {
  Tensor<T> out = global_avg_pool(x->value);
  auto in_shape = x->value.shape;
  return detail::make_op<T>(std::move(out), "global_avg_pool", {x}, [x, in_shape](Node<T>& self) {
    x->add_grad(global_avg_pool_backward<T>(in_shape, self.grad));
  });
}

template <typename T>
Var<T> vadd(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = add(a->value, b->value);
  return detail::make_op<T>(std::move(out), "add", {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad) a->add_grad(self.grad);
    if (b->requires_grad) b->add_grad(self.grad);
  });
}

template <typename T>
Var<T> vmul_pixel_gate(const Var<T>& x, const Var<T>& gate) {
  Tensor<T> out = mul_pixel_gate(x->value, gate->value);
  return detail::make_op<T>(std::move(out), "mul_pixel_gate", {x, gate}, [x, gate](Node<T>& self) {
    const int n = x->value.shape[0], c = x->value.shape[1];
    const int64_t hw = static_cast<int64_t>(x->value.shape[2]) * x->value.shape[3];
    if (x->requires_grad) {
      Tensor<T> gx(x->value.shape);
      for (int b = 0; b < n; ++b) {
        const T* gp = gate->value.data.data() + static_cast<int64_t>(b) * hw;
        for (int ch = 0; ch < c; ++ch) {
          const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i) gx.data[off + i] = self.grad.data[off + i] * gp[i];
        }
      }
      x->add_grad(gx);
    }
    if (gate->requires_grad) {
      Tensor<T> gg = Tensor<T>::zeros(gate->value.shape);
      for (int b = 0; b < n; ++b) {
        T* gp = gg.data.data() + static_cast<int64_t>(b) * hw;
        for (int ch = 0; ch < c; ++ch) {
          const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i)
            gp[i] += self.grad.data[off + i] * x->value.data[off + i];
        }
      }
      gate->add_grad(gg);
    }
  });
}

template <typename T>
Var<T> vsum(const Var<T>& x) {
  T acc = 0;
  for (const T v : x->value.data) acc += v;
  return detail::make_op<T>(Tensor<T>::scalar(acc), "sum", {x}, [x](Node<T>& self) {
    x->add_grad(Tensor<T>::full(x->value.shape, self.grad.data[0]));
  });
}

// ---------------------------------------------------------------------------
// Cross-entropy (probabilities in, scalar out). Mean over samples, and over
// pixels in the dense variant; log is clamped at 1e-12.

inline constexpr double kLogClamp = 1e-12;

template <typename T>
Var<T> vcross_entropy(const Var<T>& probs, const std::vector<int>& targets,
                      const std::vector<double>& class_weights = {}) {
  const auto& p = probs->value;
  if (p.ndim() != 2) throw std::invalid_argument("cross_entropy: expected (N,C) probabilities");
  const int n = p.shape[0], c = p.shape[1];
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= c) throw std::invalid_argument("cross_entropy: target index out of class range");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != c)
    throw std::invalid_argument("cross_entropy: class weight count mismatch");
  double acc = 0;
  for (int r = 0; r < n; ++r) {
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<size_t>(targets[r])];
    acc -= w * std::log(std::max(static_cast<double>(p.at2(r, targets[r])), kLogClamp));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  return detail::make_op<T>(std::move(out), "cross_entropy", {probs},
                            [probs, targets, class_weights, n, c](Node<T>& self) {
                              Tensor<T> gp = Tensor<T>::zeros(probs->value.shape);
                              const T up = self.grad.data[0];
                              for (int r = 0; r < n; ++r) {
                                const int t = targets[r];
                                const double w =
                                    class_weights.empty() ? 1.0 : class_weights[static_cast<size_t>(t)];
                                const double pv = static_cast<double>(probs->value.at2(r, t));
                                if (pv > kLogClamp)
                                  gp.at2(r, t) = static_cast<T>(-w / pv / n) * up;
                              }
                              probs->add_grad(gp);
                            });
}

/// Dense (per-pixel) variant: probs (N,C,H,W), targets (N,H,W) class ids.
template <typename T>
Var<T> vcross_entropy_pixels(const Var<T>& probs, const Tensor<uint8_t>& targets,
                             const std::vector<double>& class_weights = {}) {
  const auto& p = probs->value;
  if (p.ndim() != 4) throw std::invalid_argument("cross_entropy_pixels: expected (N,C,H,W)");
  const int n = p.shape[0], c = p.shape[1];
  const int64_t hw = static_cast<int64_t>(p.shape[2]) * p.shape[3];
  if (targets.shape != std::vector<int>{n, p.shape[2], p.shape[3]})
    throw std::invalid_argument("cross_entropy_pixels: target shape mismatch");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != c)
    throw std::invalid_argument("cross_entropy_pixels: class weight count mismatch");
  const int64_t count = static_cast<int64_t>(n) * hw;
  double acc = 0;
  for (int b = 0; b < n; ++b) {
    const T* pp = p.data.data() + static_cast<int64_t>(b) * c * hw;
    const uint8_t* tp = targets.data.data() + static_cast<int64_t>(b) * hw;
    for (int64_t px = 0; px < hw; ++px) {
      const int t = tp[px];
      if (t >= c) throw std::invalid_argument("cross_entropy_pixels: target index out of class range");
      const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<size_t>(t)];
      acc -= w * std::log(std::max(static_cast<double>(pp[t * hw + px]), kLogClamp));
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / count));
  return detail::make_op<T>(
      std::move(out), "cross_entropy_pixels", {probs},
      [probs, targets, class_weights, n, c, hw, count](Node<T>& self) {
        Tensor<T> gp = Tensor<T>::zeros(probs->value.shape);
        const T up = self.grad.data[0];
        for (int b = 0; b < n; ++b) {
          const T* pp = probs->value.data.data() + static_cast<int64_t>(b) * c * hw;
          T* gpp = gp.data.data() + static_cast<int64_t>(b) * c * hw;
          const uint8_t* tp = targets.data.data() + static_cast<int64_t>(b) * hw;
          for (int64_t px = 0; px < hw; ++px) {
            const int t = tp[px];
            const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<size_t>(t)];
            const double pv = static_cast<double>(pp[t * hw + px]);
            if (pv > kLogClamp) gpp[t * hw + px] = static_cast<T>(-w / pv / count) * up;
          }
        }
        probs->add_grad(gp);
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.

/// Builds a scalar loss from leaf variables. The function must be a pure
/// function of the leaves (seed any internal RNG identically per call).
template <typename T>
using GraphFn = std::function<Var<T>(const std::vector<Var<T>>&)>;

/// Max over all coordinates of |analytic - numeric| /
/// max(1e-8, |analytic| + |numeric|), central differences with step eps.
inline double grad_check(const GraphFn<double>& f, const std::vector<Tensor<double>>& inputs,
                         double eps = 1e-5) {
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(parameter(t));
  Var<double> loss = f(leaves);
  backward(loss);

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    std::vector<Var<double>> ls;
    ls.reserve(vals.size());
    for (const auto& t : vals) ls.push_back(constant(t));
    return f(ls)->value.data[0];
  };

  double max_err = 0;
  std::vector<Tensor<double>> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& analytic = leaves[i]->grad_or_zeros();
    for (size_t j = 0; j < work[i].data.size(); ++j) {
      const double keep = work[i].data[j];
      work[i].data[j] = keep + eps;
      const double up = eval(work);
      work[i].data[j] = keep - eps;
      const double down = eval(work);
      work[i].data[j] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic.data[j];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace stmbr
