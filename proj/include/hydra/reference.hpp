#pragma once

// Deliberately naive reference implementations used as independent oracles by
// the check suite and the tests. Nothing here shares a code path with the
// optimised operations beyond the feature maps themselves.

#include <cmath>
#include <vector>

#include "hydra/kernels.hpp"
#include "hydra/tensor.hpp"

namespace hydra::reference {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

// Per-head softmax attention, building each head's T x T matrix explicitly.
inline Tensor msa_per_head(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t t = q.rows(), d = q.cols(), dh = d / heads;
  Tensor out({t, d});
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::vector<double>> a(t, std::vector<double>(t));
    for (std::size_t i = 0; i < t; ++i) {
      double peak = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        a[i][j] = dot / std::sqrt(static_cast<double>(d));
        peak = std::max(peak, a[i][j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < t; ++j) z += a[i][j] = std::exp(a[i][j] - peak);
      for (std::size_t j = 0; j < t; ++j) a[i][j] /= z;
    }
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < t; ++j) acc += a[i][j] * v(j, h * dh + c);
        out(i, h * dh + c) = acc;
      }
  }
  return out;
}

// Multi-head linear attention evaluated left to right: each head forms the
// T x T similarity phi(Q)_h phi(K)_h^T and then applies it to V_h.
inline Tensor linear_attention_per_head(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                        const kernels::KernelPair& pair) {
  const std::size_t t = q.rows(), d = q.cols(), dh = d / heads;
  const Tensor fq = kernels::apply_feature_map(q, pair.query, t);
  const Tensor fk = kernels::apply_feature_map(k, pair.key, t);
  Tensor out({t, d});
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::vector<double>> sim(t, std::vector<double>(t, 0.0));
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t c = 0; c < dh; ++c) sim[i][j] += fq(i, h * dh + c) * fk(j, h * dh + c);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < t; ++j) acc += sim[i][j] * v(j, h * dh + c);
        out(i, h * dh + c) = acc;
      }
  }
  if (pair.post_layer_norm()) return kernels::layer_norm(out);
  return out;
}

// Hydra as D one-dimensional heads, looped head by head.
inline Tensor hydra_per_head(const Tensor& q, const Tensor& k, const Tensor& v, const kernels::KernelPair& pair) {
  return linear_attention_per_head(q, k, v, q.cols(), pair);
}

}  // namespace hydra::reference
