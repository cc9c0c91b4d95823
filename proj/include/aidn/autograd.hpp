#pragma once

// Reverse-mode tape. Each recorded node owns its forward value and a closure
// that scatters the node's gradient back into its inputs' gradient buffers.
// backward() seeds the scalar output with 1 and replays the nodes in exact
// reverse recording order; += accumulation handles fan-out.

#include <functional>
#include <utility>
#include <vector>

#include "aidn/ops.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value) { return push(std::move(value), nullptr); }

  const Tensor<T>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  /// Gradient of the last backward() target w.r.t. v. Zero tensor if the
  /// node was not reached.
  const Tensor<T>& grad(Var v) {
    return grad_buf(v);
  }

  Tensor<T>& grad_buf(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.grad_live) {
      n.grad = Tensor<T>::zeros(n.value.shape);
      n.grad_live = true;
    }
    return n.grad;
  }

  bool grad_live(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad_live; }

  template <typename Back>
  Var record(Tensor<T> value, Back&& back) {
    return push(std::move(value), std::forward<Back>(back));
  }

  void backward(Var scalar_out) {
    const Tensor<T>& v = val(scalar_out);
    if (v.size() != 1) throw ShapeError("Tape::backward: target is not scalar");
    grad_buf(scalar_out)[0] = T(1);
    for (int i = scalar_out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad_live && n.back) n.back(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_live = false;
    std::function<void(Tape&, const Tensor<T>&)> back;
  };

  template <typename Back>
  Var push(Tensor<T> value, Back&& back) {
    nodes_.push_back(Node{std::move(value), {}, false, std::forward<Back>(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

// --- differentiable wrappers around the ops kernels ------------------------

namespace ag {

template <typename T>
Var conv2d(Tape<T>& tp, Var in, Var kernel, Var bias) {
  Tensor<T> out = aidn::conv2d(tp.val(in), tp.val(kernel), tp.val(bias));
  return tp.record(std::move(out), [in, kernel, bias](Tape<T>& t, const Tensor<T>& g) {
    conv2d_backward(t.val(in), t.val(kernel), g, t.grad_buf(in), t.grad_buf(kernel),
                    t.grad_buf(bias));
  });
}

template <typename T>
Var fully_connected(Tape<T>& tp, Var v, Var weights, Var bias) {
  Tensor<T> out = aidn::fully_connected(tp.val(v), tp.val(weights), tp.val(bias));
  return tp.record(std::move(out), [v, weights, bias](Tape<T>& t, const Tensor<T>& g) {
    fully_connected_backward(t.val(v), t.val(weights), g, t.grad_buf(v), t.grad_buf(weights),
                             t.grad_buf(bias));
  });
}

template <typename T>
Var relu(Tape<T>& tp, Var x) {
  Tensor<T> out = aidn::relu(tp.val(x));
  return tp.record(std::move(out), [x](Tape<T>& t, const Tensor<T>& g) {
    relu_backward(t.val(x), g, t.grad_buf(x));
  });
}

template <typename T>
Var softmax(Tape<T>& tp, Var v) {
  Tensor<T> out = aidn::softmax(tp.val(v));
  return tp.record(std::move(out), [v](Tape<T>& t, const Tensor<T>& g) {
    // reads its own output value; the node id is the one being visited, so
    // recompute from the stored input instead of capturing the out Var.
    Tensor<T> o = aidn::softmax(t.val(v));
    softmax_backward(o, g, t.grad_buf(v));
  });
}

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
  detail::check_same_shape(tp.val(a).shape, tp.val(b).shape, "add");
  Tensor<T> out = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tp.record(std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buf(a);
    Tensor<T>& gb = t.grad_buf(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
Var bicubic_resize(Tape<T>& tp, Var x, int outH, int outW) {
  Tensor<T> out = aidn::bicubic_resize(tp.val(x), outH, outW);
  return tp.record(std::move(out), [x](Tape<T>& t, const Tensor<T>& g) {
    bicubic_resize_backward(t.val(x).shape, g, t.grad_buf(x));
  });
}

/// x + gain (.) y + bias with per-channel gain/bias packed as one 2C vector
/// (gain first). The residual-block modulation step.
template <typename T>
Var modulated_residual(Tape<T>& tp, Var x, Var y, Var gain_bias) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& yv = tp.val(y);
  const Tensor<T>& gb = tp.val(gain_bias);
  detail::check_same_shape(xv.shape, yv.shape, "modulated_residual");
  const int C = xv.shape[2];
  if (gb.shape.rank != 1 || gb.shape[0] != 2 * C)
    throw ShapeError("modulated_residual: gain/bias length " + gb.shape.str() + ", expected 2C=" + std::to_string(2 * C));
  Tensor<T> out(xv.shape);
  const std::size_t pixels = xv.size() / static_cast<std::size_t>(C);
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::size_t base = p * static_cast<std::size_t>(C);
    for (int c = 0; c < C; ++c)
      out[base + c] = xv[base + c] + gb[static_cast<std::size_t>(c)] * yv[base + c] + gb[static_cast<std::size_t>(C + c)];
  }
  return tp.record(std::move(out), [x, y, gain_bias, C, pixels](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buf(x);
    Tensor<T>& gy = t.grad_buf(y);
    Tensor<T>& ggb = t.grad_buf(gain_bias);
    const Tensor<T>& yv = t.val(y);
    const Tensor<T>& gb = t.val(gain_bias);
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t base = p * static_cast<std::size_t>(C);
      for (int c = 0; c < C; ++c) {
        const T gc = g[base + c];
        gx[base + c] += gc;
        gy[base + c] += gb[static_cast<std::size_t>(c)] * gc;
        ggb[static_cast<std::size_t>(c)] += yv[base + c] * gc;
        ggb[static_cast<std::size_t>(C + c)] += gc;
      }
    }
  });
}

/// Mean squared error against a constant target; scalar output.
template <typename T>
Var mse_to_const(Tape<T>& tp, Var a, const Tensor<T>& target) {
  const Tensor<T>& av = tp.val(a);
  detail::check_same_shape(av.shape, target.shape, "mse_to_const");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  const std::size_t n = av.size();
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  Tensor<T> tgt = target;
  return tp.record(std::move(out), [a, tgt = std::move(tgt), n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buf(a);
    const Tensor<T>& av = t.val(a);
    const T scale = g[0] * T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += scale * (av[i] - tgt[i]);
  });
}

/// Mean absolute error against a constant target; scalar output. Uses the
/// sign subgradient (0 at exact ties).
template <typename T>
Var mae_to_const(Tape<T>& tp, Var a, const Tensor<T>& target) {
  const Tensor<T>& av = tp.val(a);
  detail::check_same_shape(av.shape, target.shape, "mae_to_const");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i)
    acc += std::abs(static_cast<double>(av[i]) - static_cast<double>(target[i]));
  const std::size_t n = av.size();
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(n));
  Tensor<T> tgt = target;
  return tp.record(std::move(out), [a, tgt = std::move(tgt), n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buf(a);
    const Tensor<T>& av = t.val(a);
    const T scale = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = av[i] - tgt[i];
      ga[i] += d > T(0) ? scale : (d < T(0) ? -scale : T(0));
    }
  });
}

/// wa * a + b for scalars (the loss combination).
template <typename T>
Var weighted_sum(Tape<T>& tp, T wa, Var a, Var b) {
  if (tp.val(a).size() != 1 || tp.val(b).size() != 1)
    throw ShapeError("weighted_sum: scalar operands expected");
  Tensor<T> out({1});
  out[0] = wa * tp.val(a)[0] + tp.val(b)[0];
  return tp.record(std::move(out), [a, b, wa](Tape<T>& t, const Tensor<T>& g) {
    t.grad_buf(a)[0] += wa * g[0];
    t.grad_buf(b)[0] += g[0];
  });
}

/// Fixed-projection reduction to a scalar: sum_i proj[i] * x[i]. Used by the
/// gradient checker to turn tensor-valued ops into scalar functions.
template <typename T>
Var project_to_scalar(Tape<T>& tp, Var x, const Tensor<T>& proj) {
  const Tensor<T>& xv = tp.val(x);
  if (proj.size() != xv.size()) throw ShapeError("project_to_scalar: projection size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(proj[i]) * static_cast<double>(xv[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  Tensor<T> p = proj;
  return tp.record(std::move(out), [x, p = std::move(p)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += p[i] * g[0];
  });
}

}  // namespace ag
}  // namespace aidn
