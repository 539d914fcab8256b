#pragma once

// Tape-based reverse-mode differentiation over double-precision tensors, plus a
// central finite-difference oracle to check it against.
//
// A Tape records nodes in creation order, so inputs always precede their users.
// Each node keeps the closure that produced it, which lets replay() recompute
// every activation from the leaves.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hydra/attention.hpp"
#include "hydra/kernels.hpp"
#include "hydra/tensor.hpp"

namespace hydra::ad {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
// (inputs, output, dL/doutput) -> dL/dinput for every input.
using BackwardFn = std::function<std::vector<Tensor>(std::span<const Tensor* const>, const Tensor&, const Tensor&)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool tracked = false;  // leaf whose gradient is reported
  ForwardFn forward;     // empty for leaves
  BackwardFn backward;
};

// dL/dx for tracked leaves, keyed by node id.
class Gradients {
 public:
  const Tensor& at(std::size_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw LookupError("gradients: node " + std::to_string(id) + " is not a tracked input");
    return it->second;
  }
  const Tensor& at(Var v) const { return at(v.id); }
  bool contains(std::size_t id) const { return grads_.contains(id); }
  std::size_t size() const { return grads_.size(); }

  void set(std::size_t id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }

 private:
  std::map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input whose gradient backward() reports.
  Var input(Tensor value) { return push_leaf(std::move(value), true, "input"); }
  // Leaf that receives no gradient (data, labels, fixed weights).
  Var constant(Tensor value) { return push_leaf(std::move(value), false, "constant"); }

  Var apply(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
    Node node;
    node.op = std::move(op);
    std::vector<const Tensor*> args;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractError("tape: operand recorded on a different tape");
      node.inputs.push_back(v.id);
      args.push_back(&nodes_[v.id].value);
    }
    node.value = forward(args);
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar output. Returns gradients for every tracked input.
  Gradients backward(Var output) const {
    return backward_from(output, Tensor(value(output).shape(), 1.0), true);
  }

  // Reverse sweep seeded with an arbitrary upstream gradient for `output`.
  Gradients backward_from(Var output, const Tensor& seed, bool require_scalar = false) const {
    if (output.tape != this) throw ContractError("tape: output belongs to another tape");
    if (require_scalar && value(output).size() != 1) {
      throw ContractError("grad: output must be a scalar, got shape " + shape_str(value(output).shape()));
    }
    std::vector<Tensor> adj(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);
    adj[output.id] = seed;
    live[output.id] = true;
    for (std::size_t id = output.id + 1; id-- > 0;) {
      if (!live[id]) continue;
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      std::vector<const Tensor*> args;
      for (std::size_t in : n.inputs) args.push_back(&nodes_[in].value);
      auto grads = n.backward(args, n.value, adj[id]);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t in = n.inputs[i];
        if (!live[in]) {
          adj[in] = std::move(grads[i]);
          live[in] = true;
        } else {
          adj[in] = hydra::add(adj[in], grads[i]);
        }
      }
    }
    Gradients out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].tracked) continue;
      out.set(id, live[id] ? std::move(adj[id]) : Tensor(nodes_[id].value.shape()));
    }
    return out;
  }

  // Gradient with respect to an intermediate node (not just leaves).
  Tensor gradient_wrt(Var output, Var target) const {
    std::vector<Tensor> adj(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);
    if (value(output).size() != 1) throw ContractError("gradient_wrt: output must be a scalar");
    adj[output.id] = Tensor(value(output).shape(), 1.0);
    live[output.id] = true;
    for (std::size_t id = output.id + 1; id-- > target.id + 1;) {
      if (!live[id]) continue;
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      std::vector<const Tensor*> args;
      for (std::size_t in : n.inputs) args.push_back(&nodes_[in].value);
      auto grads = n.backward(args, n.value, adj[id]);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t in = n.inputs[i];
        adj[in] = live[in] ? hydra::add(adj[in], grads[i]) : std::move(grads[i]);
        live[in] = true;
      }
    }
    return live[target.id] ? adj[target.id] : Tensor(value(target).shape());
  }

  // Recomputes every non-leaf node from the recorded leaves.
  std::vector<Tensor> replay() const {
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) {
      if (!n.forward) {
        values.push_back(n.value);
        continue;
      }
      std::vector<const Tensor*> args;
      for (std::size_t in : n.inputs) args.push_back(&values[in]);
      values.push_back(n.forward(args));
    }
    return values;
  }

 private:
  Var push_leaf(Tensor value, bool tracked, const char* op) {
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.tracked = tracked;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& value(Var v) { return v.tape->value(v); }

// ---- differentiable operations ---------------------------------------------

inline Var matmul(Var a, Var b) {
  return a.tape->apply(
      "matmul", {a, b}, [](auto in) { return hydra::matmul(*in[0], *in[1]); },
      [](auto in, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{hydra::matmul(g, hydra::transpose(*in[1])), hydra::matmul(hydra::transpose(*in[0]), g)};
      });
}

inline Var transpose(Var a) {
  return a.tape->apply(
      "transpose", {a}, [](auto in) { return hydra::transpose(*in[0]); },
      [](auto, const Tensor&, const Tensor& g) { return std::vector<Tensor>{hydra::transpose(g)}; });
}

inline Var add(Var a, Var b) {
  return a.tape->apply(
      "add", {a, b}, [](auto in) { return hydra::add(*in[0], *in[1]); },
      [](auto, const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

inline Var sub(Var a, Var b) {
  return a.tape->apply(
      "sub", {a, b}, [](auto in) { return hydra::sub(*in[0], *in[1]); },
      [](auto, const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, hydra::scale(g, -1.0)}; });
}

inline Var mul(Var a, Var b) {
  return a.tape->apply(
      "mul", {a, b}, [](auto in) { return hydra::mul(*in[0], *in[1]); },
      [](auto in, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{hydra::mul(g, *in[1]), hydra::mul(g, *in[0])};
      });
}

inline Var scale(Var a, double s) {
  return a.tape->apply(
      "scale", {a}, [s](auto in) { return hydra::scale(*in[0], s); },
      [s](auto, const Tensor&, const Tensor& g) { return std::vector<Tensor>{hydra::scale(g, s)}; });
}

// Sum of all elements as a scalar.
inline Var sum(Var a) {
  return a.tape->apply(
      "sum", {a}, [](auto in) { return Tensor::scalar(sum_all(*in[0])); },
      [](auto in, const Tensor&, const Tensor& g) { return std::vector<Tensor>{Tensor(in[0]->shape(), g.item())}; });
}

inline Var reduce_sum(Var a, std::size_t axis, bool keep_dim = false) {
  return a.tape->apply(
      "reduce_sum", {a}, [axis, keep_dim](auto in) { return hydra::reduce_sum(*in[0], axis, keep_dim); },
      [axis](auto in, const Tensor&, const Tensor& g) {
        const Tensor& x = *in[0];
        Tensor dx(x.shape());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) = g[axis == 0 ? j : i];
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var softmax(Var a, Normalize along) {
  return a.tape->apply(
      "softmax", {a}, [along](auto in) { return hydra::softmax(*in[0], along); },
      [along](auto, const Tensor& y, const Tensor& g) {
        Tensor dx(y.shape());
        const std::size_t m = y.rows(), n = y.cols();
        if (along == Normalize::each_row) {
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < n; ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
          }
        } else {
          for (std::size_t j = 0; j < n; ++j) {
            double dot = 0;
            for (std::size_t i = 0; i < m; ++i) dot += g(i, j) * y(i, j);
            for (std::size_t i = 0; i < m; ++i) dx(i, j) = y(i, j) * (g(i, j) - dot);
          }
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

// Per-row L1 or L2 norm (length-M vector).
inline Var norm_rows(Var a, int p) {
  return a.tape->apply(
      "norm_rows", {a}, [p](auto in) { return hydra::norm_rows(*in[0], p); },
      [p](auto in, const Tensor& y, const Tensor& g) {
        const Tensor& x = *in[0];
        Tensor dx(x.shape());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) {
            const double v = x(i, j);
            if (p == 1) {
              dx(i, j) = g[i] * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
            } else {
              dx(i, j) = y[i] > 0 ? g[i] * v / y[i] : 0.0;
            }
          }
        return std::vector<Tensor>{std::move(dx)};
      });
}

// Elementwise map with its derivative expressed through (x, y).
inline Var map(Var a, std::string op, std::function<double(double)> f, std::function<double(double, double)> df) {
  return a.tape->apply(
      std::move(op), {a}, [f](auto in) { return hydra::map(*in[0], f); },
      [df](auto in, const Tensor& y, const Tensor& g) {
        Tensor dx(y.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * df((*in[0])[i], y[i]);
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return map(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

inline Var feature_map(Var a, const kernels::FeatureMapSpec& spec) {
  const kernels::FeatureMapSpec s{spec.map, false};
  return a.tape->apply(
      "phi:" + std::string(kernels::name(spec.map)), {a},
      [s](auto in) { return kernels::apply_feature_map(*in[0], s, in[0]->rows()); },
      [s](auto in, const Tensor& y, const Tensor& g) {
        return std::vector<Tensor>{kernels::feature_map_backward(*in[0], y, g, s, in[0]->rows())};
      });
}

// Non-affine row LayerNorm.
inline Var layer_norm(Var a) {
  return a.tape->apply(
      "layer_norm", {a}, [](auto in) { return kernels::layer_norm(*in[0]); },
      [](auto in, const Tensor&, const Tensor& g) { return std::vector<Tensor>{kernels::layer_norm_backward(*in[0], g)}; });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  return a.tape->apply(
      "slice_cols", {a}, [begin, count](auto in) { return hydra::slice_cols(*in[0], begin, count); },
      [begin, count](auto in, const Tensor&, const Tensor& g) {
        Tensor dx(in[0]->shape());
        for (std::size_t i = 0; i < dx.rows(); ++i)
          for (std::size_t j = 0; j < count; ++j) dx(i, begin + j) = g(i, j);
        return std::vector<Tensor>{std::move(dx)};
      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  return parts.front().tape->apply(
      "concat_cols", parts,
      [](auto in) {
        std::vector<Tensor> xs;
        for (const Tensor* t : in) xs.push_back(*t);
        return hydra::concat_cols<double>(xs);
      },
      [](auto in, const Tensor&, const Tensor& g) {
        std::vector<Tensor> out;
        std::size_t off = 0;
        for (const Tensor* t : in) {
          out.push_back(hydra::slice_cols(g, off, t->cols()));
          off += t->cols();
        }
        return out;
      });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  return parts.front().tape->apply(
      "concat_rows", parts,
      [](auto in) {
        std::vector<Tensor> xs;
        for (const Tensor* t : in) xs.push_back(*t);
        return hydra::concat_rows<double>(xs);
      },
      [](auto in, const Tensor&, const Tensor& g) {
        std::vector<Tensor> out;
        std::size_t off = 0;
        for (const Tensor* t : in) {
          std::vector<double> part(g.data().begin() + static_cast<std::ptrdiff_t>(off * g.cols()),
                                   g.data().begin() + static_cast<std::ptrdiff_t>((off + t->rows()) * g.cols()));
          out.emplace_back(t->shape(), std::move(part));
          off += t->rows();
        }
        return out;
      });
}

inline Var take_row(Var a, std::size_t r) {
  return a.tape->apply(
      "take_row", {a}, [r](auto in) { return hydra::take_row(*in[0], r); },
      [r](auto in, const Tensor&, const Tensor& g) {
        Tensor dx(in[0]->shape());
        std::copy(g.data().begin(), g.data().end(), dx.row(r).begin());
        return std::vector<Tensor>{std::move(dx)};
      });
}

// Explicit row replication of a vector; the adjoint sums over rows.
inline Var broadcast_rows(Var v, std::size_t rows) {
  return v.tape->apply(
      "broadcast_rows", {v}, [rows](auto in) { return hydra::broadcast_rows(*in[0], rows); },
      [](auto in, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{hydra::reduce_sum(g, 0).reshaped(in[0]->shape())};
      });
}

// Fused hydra attention; the backward pass is attention::hydra_backward.
inline Var hydra_attention(Var q, Var k, Var v, const kernels::KernelPair& pair) {
  return q.tape->apply(
      "hydra", {q, k, v}, [pair](auto in) { return attention::hydra(*in[0], *in[1], *in[2], pair); },
      [pair](auto in, const Tensor&, const Tensor& g) {
        auto gr = attention::hydra_backward(*in[0], *in[1], *in[2], pair, g);
        return std::vector<Tensor>{std::move(gr.dq), std::move(gr.dk), std::move(gr.dv)};
      });
}

// Log-softmax cross entropy of a 1 x C logit row against `label`.
inline Var cross_entropy(Var logits, std::size_t label) {
  return logits.tape->apply(
      "cross_entropy", {logits},
      [label](auto in) {
        const Tensor& z = *in[0];
        if (label >= z.size()) throw DimensionError("cross_entropy: label out of range");
        double peak = z[0];
        for (double v : z.data()) peak = std::max(peak, v);
        double total = 0;
        for (double v : z.data()) total += std::exp(v - peak);
        return Tensor::scalar(peak + std::log(total) - z[label]);
      },
      [label](auto in, const Tensor&, const Tensor& g) {
        Tensor p = hydra::softmax(in[0]->reshaped({1, in[0]->size()}), Normalize::each_row).reshaped(in[0]->shape());
        p[label] -= 1.0;
        return std::vector<Tensor>{hydra::scale(p, g.item())};
      });
}

// ---- composite attention built from primitive ops ----------------------------

// Softmax attention per head from primitives (slices, matmul, softmax, concat).
inline Var msa(Var q, Var k, Var v, std::size_t heads) {
  const std::size_t d = value(q).cols();
  attention::detail::require_heads(d, heads, "ad::msa");
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
    Var attn = softmax(scale(matmul(qh, transpose(kh)), s), Normalize::each_row);
    outs.push_back(matmul(attn, vh));
  }
  return heads == 1 ? outs.front() : concat_cols(outs);
}

// Multi-head linear attention from primitives; phi applied to full rows before slicing.
inline Var mla(Var q, Var k, Var v, std::size_t heads, const kernels::KernelPair& pair) {
  const std::size_t d = value(q).cols();
  attention::detail::require_heads(d, heads, "ad::mla");
  const std::size_t dh = d / heads;
  Var fq = feature_map(q, pair.query), fk = feature_map(k, pair.key);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var kv = matmul(transpose(slice_cols(fk, h * dh, dh)), slice_cols(v, h * dh, dh));
    outs.push_back(matmul(slice_cols(fq, h * dh, dh), kv));
  }
  Var out = heads == 1 ? outs.front() : concat_cols(outs);
  return pair.post_layer_norm() ? layer_norm(out) : out;
}

// Hydra from primitives: phi(Q) * broadcast(sum_t phi(K) * V).
inline Var hydra_composite(Var q, Var k, Var v, const kernels::KernelPair& pair) {
  const std::size_t t = value(q).rows();
  Var fq = feature_map(q, pair.query), fk = feature_map(k, pair.key);
  Var kv = reduce_sum(mul(fk, v), 0);
  Var out = mul(fq, broadcast_rows(kv, t));
  return pair.post_layer_norm() ? layer_norm(out) : out;
}

// ---- grad / finite-difference entry points -----------------------------------

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Records f on a fresh tape and returns d f / d inputs[i] in input order.
inline std::vector<Tensor> grad(const ScalarFn& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(tape.input(x));
  Var out = f(tape, vars);
  Gradients g = tape.backward(out);
  std::vector<Tensor> result;
  for (const Var& v : vars) result.push_back(g.at(v));
  return result;
}

inline double evaluate(const ScalarFn& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(tape.constant(x));
  return tape.value(f(tape, vars)).item();
}

// Central differences (f(x + h e) - f(x - h e)) / 2h for every coordinate of every input.
inline std::vector<Tensor> finite_diff(const std::function<double(std::span<const Tensor>)>& f,
                                       std::span<const Tensor> inputs, double h = 1e-5) {
  if (!(h > 0)) throw PreconditionError("finite_diff: step must be positive");
  std::vector<Tensor> xs(inputs.begin(), inputs.end());
  std::vector<Tensor> grads;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    Tensor g(xs[a].shape());
    for (std::size_t i = 0; i < xs[a].size(); ++i) {
      const double orig = xs[a][i];
      xs[a][i] = orig + h;
      const double up = f(xs);
      xs[a][i] = orig - h;
      const double down = f(xs);
      xs[a][i] = orig;
      g[i] = (up - down) / (2 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline std::vector<Tensor> finite_diff(const ScalarFn& f, std::span<const Tensor> inputs, double h = 1e-5) {
  return finite_diff([&f](std::span<const Tensor> xs) { return evaluate(f, xs); }, inputs, h);
}

}  // namespace hydra::ad
