#pragma once

// Softmax multi-head attention, multi-head linear attention, hydra attention
// and the two O(TD) methods that reduce to hydra (AFT-Simple, PolyNL).
// None of these apply input/output projections or biases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/kernels.hpp"
#include "hydra/tensor.hpp"

namespace hydra::attention {

using kernels::FeatureMap;
using kernels::FeatureMapSpec;
using kernels::KernelPair;

enum class Variant { MSA, MLA, Hydra, AFTSimple, PolyNL };

inline std::string_view name(Variant v) {
  switch (v) {
    case Variant::MSA: return "msa";
    case Variant::MLA: return "mla";
    case Variant::Hydra: return "hydra";
    case Variant::AFTSimple: return "aft";
    case Variant::PolyNL: return "polynl";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view text) {
  for (Variant v : {Variant::MSA, Variant::MLA, Variant::Hydra, Variant::AFTSimple, Variant::PolyNL})
    if (name(v) == text) return v;
  return std::nullopt;
}

struct AttentionLayerSpec {
  Variant variant = Variant::MSA;
  std::size_t heads = 1;
  KernelPair kernels = KernelPair::symmetric(FeatureMap::CosineL2);
  std::size_t tokens = 1;
  std::size_t dim = 1;

  // Throws SpecError unless heads divides dim, and hydra uses heads == dim.
  void validate() const {
    if (tokens == 0 || dim == 0) throw SpecError("attention spec: T and D must be positive");
    if (heads == 0 || dim % heads != 0) {
      throw SpecError("attention spec: H=" + std::to_string(heads) + " must divide D=" + std::to_string(dim));
    }
    if ((variant == Variant::Hydra || variant == Variant::AFTSimple || variant == Variant::PolyNL) && heads != dim) {
      throw SpecError("attention spec: hydra-family layers use H == D");
    }
  }

  friend bool operator==(const AttentionLayerSpec&, const AttentionLayerSpec&) = default;
};

// Per-call instrumentation. `macs` counts multiply-accumulates spent creating and
// applying attention (or the global feature vector); `feature_map_ops` counts the
// elementwise work of phi; `peak_intermediate` is the largest scratch buffer in values.
struct OpStats {
  std::uint64_t macs = 0;
  std::uint64_t feature_map_ops = 0;
  std::size_t peak_intermediate = 0;

  void note_buffer(std::size_t values) { peak_intermediate = std::max(peak_intermediate, values); }
};

namespace detail {

template <std::floating_point S>
void require_qkv(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v, const char* op) {
  hydra::detail::require_rank2(q, op);
  hydra::detail::require_same_shape(q, k, op);
  hydra::detail::require_same_shape(q, v, op);
}

inline void require_heads(std::size_t dim, std::size_t heads, const char* op) {
  if (heads == 0 || dim % heads != 0) {
    throw SpecError(std::string(op) + ": H=" + std::to_string(heads) + " does not divide D=" + std::to_string(dim));
  }
}

inline void count(OpStats* stats, std::uint64_t macs) {
  if (stats) stats->macs += macs;
}

template <std::floating_point S>
BasicTensor<S> feature_map(const BasicTensor<S>& x, const FeatureMapSpec& spec, OpStats* stats) {
  if (stats) {
    stats->feature_map_ops += kernels::feature_map_cost(spec.map, x.rows(), x.cols());
    if (spec.map != FeatureMap::Identity) stats->note_buffer(x.size());
  }
  return kernels::apply_feature_map(x, spec, x.rows());
}

}  // namespace detail

// Softmax attention per head on D/H-wide slices, scaled by 1/sqrt(D), heads concatenated.
// All H attention matrices are materialised together (H x T x T scratch).
template <std::floating_point S>
BasicTensor<S> msa(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v, std::size_t heads,
                   OpStats* stats = nullptr) {
  detail::require_qkv(q, k, v, "msa");
  const std::size_t t = q.rows(), d = q.cols();
  detail::require_heads(d, heads, "msa");
  const std::size_t dh = d / heads;
  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<S> scores(heads * t * t);
  if (stats) stats->note_buffer(scores.size());
  const S* pq = q.data().data();
  const S* pk = k.data().data();
  const S* pv = v.data().data();
  std::vector<S> kt(dh * t);  // this head's K slice, transposed
  for (std::size_t h = 0; h < heads; ++h) {
    S* attn = scores.data() + h * t * t;
    const std::size_t off = h * dh;
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t c = 0; c < dh; ++c) kt[c * t + j] = pk[j * d + off + c];
    for (std::size_t i = 0; i < t; ++i) {
      const S* qi = pq + i * d + off;
      S* row = attn + i * t;
      std::fill(row, row + t, S{0});
      for (std::size_t c = 0; c < dh; ++c) {
        const S qc = qi[c];
        const S* kc = kt.data() + c * t;
        for (std::size_t j = 0; j < t; ++j) row[j] += qc * kc[j];
      }
      for (std::size_t j = 0; j < t; ++j) row[j] *= inv_sqrt_d;
      S peak = row[0];
      for (std::size_t j = 1; j < t; ++j) peak = std::max(peak, row[j]);
      S total{0};
      for (std::size_t j = 0; j < t; ++j) total += (row[j] = std::exp(row[j] - peak));
      for (std::size_t j = 0; j < t; ++j) row[j] /= total;
    }
  }
  detail::count(stats, static_cast<std::uint64_t>(t) * t * d);

  BasicTensor<S> out({t, d});
  S* po = out.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const S* attn = scores.data() + h * t * t;
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      S* oi = po + i * d + off;
      for (std::size_t j = 0; j < t; ++j) {
        const S p = attn[i * t + j];
        const S* vj = pv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
    }
  }
  detail::count(stats, static_cast<std::uint64_t>(t) * t * d);
  hydra::detail::require_finite(out, "msa");
  return out;
}

// The H per-head T x T attention matrices of msa, for inspection.
template <std::floating_point S>
std::vector<BasicTensor<S>> msa_attention_matrices(const BasicTensor<S>& q, const BasicTensor<S>& k, std::size_t heads) {
  hydra::detail::require_same_shape(q, k, "msa_attention_matrices");
  detail::require_heads(q.cols(), heads, "msa_attention_matrices");
  const std::size_t dh = q.cols() / heads;
  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  std::vector<BasicTensor<S>> mats;
  for (std::size_t h = 0; h < heads; ++h) {
    auto logits = scale(matmul(slice_cols(q, h * dh, dh), transpose(slice_cols(k, h * dh, dh))), inv_sqrt_d);
    mats.push_back(softmax(logits, Normalize::each_row));
  }
  return mats;
}

// Optional non-affine LayerNorm on an attention output ("+ln" kernels).
template <std::floating_point S>
BasicTensor<S> finish(BasicTensor<S> out, const KernelPair& kernels) {
  if (kernels.post_layer_norm()) return kernels::layer_norm(out);
  return out;
}

// Multi-head linear attention phi_q(Q)_h (phi_k(K)_h^T V_h), evaluated right-to-left so
// each head builds a (D/H) x (D/H) matrix instead of a T x T one. phi sees full rows.
template <std::floating_point S>
BasicTensor<S> mla(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v, std::size_t heads,
                   const KernelPair& kernels, OpStats* stats = nullptr) {
  detail::require_qkv(q, k, v, "mla");
  const std::size_t t = q.rows(), d = q.cols();
  detail::require_heads(d, heads, "mla");
  const std::size_t dh = d / heads;
  const auto fq = detail::feature_map(q, kernels.query, stats);
  const auto fk = detail::feature_map(k, kernels.key, stats);

  std::vector<S> kv(heads * dh * dh);
  if (stats) stats->note_buffer(kv.size());
  for (std::size_t h = 0; h < heads; ++h) {
    S* m = kv.data() + h * dh * dh;
    const std::size_t off = h * dh;
    for (std::size_t s = 0; s < t; ++s) {
      const S* krow = fk.data().data() + s * d + off;
      const S* vrow = v.data().data() + s * d + off;
      for (std::size_t a = 0; a < dh; ++a) {
        const S ka = krow[a];
        for (std::size_t b = 0; b < dh; ++b) m[a * dh + b] += ka * vrow[b];
      }
    }
  }
  detail::count(stats, static_cast<std::uint64_t>(t) * d * dh);

  BasicTensor<S> out({t, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const S* m = kv.data() + h * dh * dh;
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      const S* qrow = fq.data().data() + i * d + off;
      S* orow = out.data().data() + i * d + off;
      for (std::size_t a = 0; a < dh; ++a) {
        const S qa = qrow[a];
        for (std::size_t b = 0; b < dh; ++b) orow[b] += qa * m[a * dh + b];
      }
    }
  }
  detail::count(stats, static_cast<std::uint64_t>(t) * d * dh);
  hydra::detail::require_finite(out, "mla");
  return finish(std::move(out), kernels);
}

// Sum over tokens of phi_k(K)^t * V^t: the global feature vector (length D).
template <std::floating_point S>
BasicTensor<S> global_feature(const BasicTensor<S>& phi_k, const BasicTensor<S>& v) {
  hydra::detail::require_same_shape(phi_k, v, "global_feature");
  const std::size_t t = v.rows(), d = v.cols();
  BasicTensor<S> kv({d});
  for (std::size_t s = 0; s < t; ++s) {
    auto kr = phi_k.row(s);
    auto vr = v.row(s);
    for (std::size_t c = 0; c < d; ++c) kv[c] += kr[c] * vr[c];
  }
  return kv;
}

// Hydra attention: phi_q(Q) gated by the global feature vector, O(TD) time and space.
template <std::floating_point S>
BasicTensor<S> hydra(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v,
                     const KernelPair& kernels = KernelPair::symmetric(FeatureMap::CosineL2),
                     OpStats* stats = nullptr) {
  detail::require_qkv(q, k, v, "hydra");
  const std::size_t t = q.rows(), d = q.cols();
  const auto fq = detail::feature_map(q, kernels.query, stats);
  const auto fk = detail::feature_map(k, kernels.key, stats);
  const auto kv = global_feature(fk, v);
  BasicTensor<S> out({t, d});
  for (std::size_t i = 0; i < t; ++i) {
    auto qr = fq.row(i);
    auto orow = out.row(i);
    for (std::size_t c = 0; c < d; ++c) orow[c] = qr[c] * kv[c];
  }
  detail::count(stats, 2 * static_cast<std::uint64_t>(t) * d);
  if (stats) stats->note_buffer(out.size());
  hydra::detail::require_finite(out, "hydra");
  return finish(std::move(out), kernels);
}

template <std::floating_point S>
struct HydraGrads {
  BasicTensor<S> dq, dk, dv;
};

// Adjoint of hydra() (including the "+ln" LayerNorm when requested) for an upstream gradient.
template <std::floating_point S>
HydraGrads<S> hydra_backward(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v,
                             const KernelPair& kernels, const BasicTensor<S>& upstream) {
  detail::require_qkv(q, k, v, "hydra_backward");
  hydra::detail::require_same_shape(q, upstream, "hydra_backward");
  const std::size_t t = q.rows(), d = q.cols();
  const auto fq = kernels::apply_feature_map(q, kernels.query, t);
  const auto fk = kernels::apply_feature_map(k, kernels.key, t);
  const auto kv = global_feature(fk, v);

  BasicTensor<S> dy = upstream;
  if (kernels.post_layer_norm()) {
    BasicTensor<S> raw({t, d});
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c) raw(i, c) = fq(i, c) * kv[c];
    dy = kernels::layer_norm_backward(raw, upstream);
  }

  BasicTensor<S> dfq({t, d});
  BasicTensor<S> dkv({d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      dfq(i, c) = dy(i, c) * kv[c];
      dkv[c] += dy(i, c) * fq(i, c);
    }
  BasicTensor<S> dfk({t, d});
  BasicTensor<S> dv({t, d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t c = 0; c < d; ++c) {
      dfk(s, c) = dkv[c] * v(s, c);
      dv(s, c) = dkv[c] * fk(s, c);
    }
  return {kernels::feature_map_backward(q, fq, dfq, kernels.query, t),
          kernels::feature_map_backward(k, fk, dfk, kernels.key, t), std::move(dv)};
}

// AFT-Simple: sigmoid(Q) * sum_t softmax(K)^t * V^t, with softmax over the token axis.
template <std::floating_point S>
BasicTensor<S> aft_simple(const BasicTensor<S>& q, const BasicTensor<S>& k, const BasicTensor<S>& v,
                          OpStats* stats = nullptr) {
  detail::require_qkv(q, k, v, "aft_simple");
  const std::size_t t = q.rows(), d = q.cols();
  std::vector<S> weights(t * d);
  for (std::size_t c = 0; c < d; ++c) {
    S peak = k(0, c);
    for (std::size_t s = 1; s < t; ++s) peak = std::max(peak, k(s, c));
    S total{0};
    for (std::size_t s = 0; s < t; ++s) {
      const S e = std::exp(k(s, c) - peak);
      weights[s * d + c] = e;
      total += e;
    }
    for (std::size_t s = 0; s < t; ++s) weights[s * d + c] /= total;
  }
  std::vector<S> pooled(d, S{0});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += weights[s * d + c] * v(s, c);
  BasicTensor<S> out({t, d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c) out(i, c) = (S{1} / (S{1} + std::exp(-q(i, c)))) * pooled[c];
  if (stats) {
    stats->feature_map_ops += 3 * static_cast<std::uint64_t>(t) * d;
    stats->note_buffer(weights.size());
  }
  detail::count(stats, 2 * static_cast<std::uint64_t>(t) * d);
  hydra::detail::require_finite(out, "aft_simple");
  return out;
}

// PolyNL: (X * (1/T) sum_t (X W1 * X W2)) W3, bias-free.
template <std::floating_point S>
BasicTensor<S> polynl(const BasicTensor<S>& x, const BasicTensor<S>& w1, const BasicTensor<S>& w2,
                      const BasicTensor<S>& w3) {
  hydra::detail::require_rank2(x, "polynl");
  const std::size_t t = x.rows(), d = x.cols();
  for (const auto* w : {&w1, &w2, &w3}) {
    if (w->rank() != 2 || w->rows() != d || w->cols() != d) {
      throw DimensionError("polynl: weights must be D x D, got " + shape_str(w->shape()));
    }
  }
  const auto a = matmul(x, w1);
  const auto b = matmul(x, w2);
  BasicTensor<S> pooled({d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += a(s, c) * b(s, c);
  const S inv_t = S{1} / static_cast<S>(t);
  BasicTensor<S> gated({t, d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c) gated(i, c) = x(i, c) * (inv_t * pooled[c]);
  return matmul(gated, w3);
}

// Dispatch on a layer spec (PolyNL needs weights and is not handled here).
template <std::floating_point S>
BasicTensor<S> attend(const AttentionLayerSpec& spec, const BasicTensor<S>& q, const BasicTensor<S>& k,
                      const BasicTensor<S>& v, OpStats* stats = nullptr) {
  spec.validate();
  switch (spec.variant) {
    case Variant::MSA: return msa(q, k, v, spec.heads, stats);
    case Variant::MLA: return mla(q, k, v, spec.heads, spec.kernels, stats);
    case Variant::Hydra: return hydra(q, k, v, spec.kernels, stats);
    case Variant::AFTSimple: return aft_simple(q, k, v, stats);
    case Variant::PolyNL: break;
  }
  throw SpecError("attend: PolyNL takes weight matrices; call polynl() directly");
}

// Closed-form attention MACs (excluding feature maps) for a T x D input with H heads.
inline std::uint64_t analytic_macs(Variant variant, std::uint64_t t, std::uint64_t d, std::uint64_t heads) {
  switch (variant) {
    case Variant::MSA: return 2 * t * t * d;
    case Variant::MLA: return 2 * t * d * (d / heads);
    case Variant::Hydra:
    case Variant::AFTSimple:
    case Variant::PolyNL: return 2 * t * d;
  }
  return 0;
}

}  // namespace hydra::attention
