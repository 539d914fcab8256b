#pragma once

// Kernel feature maps phi(.) for linear/hydra attention. Every map acts on
// whole T x D matrices: row-wise maps see the full D-dimensional token row,
// never a per-head slice.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "hydra/tensor.hpp"

namespace hydra::kernels {

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr double kLayerNormEpsilon = 1e-5;

enum class FeatureMap { CosineL2, MeanSqrtT, Tanh, Sigmoid, SoftmaxTokens, L1Norm, Identity };

struct FeatureMapSpec {
  FeatureMap map = FeatureMap::CosineL2;
  // "+ln": non-affine LayerNorm on the attention output, before the projection.
  bool post_layer_norm = false;

  friend bool operator==(const FeatureMapSpec&, const FeatureMapSpec&) = default;
};

// Feature maps for the query and key side; they may differ.
struct KernelPair {
  FeatureMapSpec query;
  FeatureMapSpec key;

  bool post_layer_norm() const noexcept { return query.post_layer_norm || key.post_layer_norm; }

  KernelPair without_layer_norm() const {
    KernelPair k = *this;
    k.query.post_layer_norm = k.key.post_layer_norm = false;
    return k;
  }

  static KernelPair symmetric(FeatureMap map, bool ln = false) { return {{map, ln}, {map, ln}}; }

  friend bool operator==(const KernelPair&, const KernelPair&) = default;
};

inline std::string_view name(FeatureMap map) {
  switch (map) {
    case FeatureMap::CosineL2: return "cossim";
    case FeatureMap::MeanSqrtT: return "mean";
    case FeatureMap::Tanh: return "tanh";
    case FeatureMap::Sigmoid: return "sigmoid";
    case FeatureMap::SoftmaxTokens: return "softmax";
    case FeatureMap::L1Norm: return "l1";
    case FeatureMap::Identity: return "identity";
  }
  return "?";
}

inline std::string name(const FeatureMapSpec& spec) {
  return std::string(name(spec.map)) + (spec.post_layer_norm ? "+ln" : "");
}

// Parses "cossim", "tanh+ln", ... Returns nullopt for unknown names.
inline std::optional<FeatureMapSpec> parse_feature_map(std::string_view text) {
  FeatureMapSpec spec;
  constexpr std::string_view kLn = "+ln";
  if (text.size() > kLn.size() && text.substr(text.size() - kLn.size()) == kLn) {
    spec.post_layer_norm = true;
    text.remove_suffix(kLn.size());
  }
  for (FeatureMap m : {FeatureMap::CosineL2, FeatureMap::MeanSqrtT, FeatureMap::Tanh, FeatureMap::Sigmoid,
                       FeatureMap::SoftmaxTokens, FeatureMap::L1Norm, FeatureMap::Identity}) {
    if (name(m) == text) {
      spec.map = m;
      return spec;
    }
  }
  return std::nullopt;
}

// "cossim" applies to both sides; "tanh,cossim" gives query and key maps separately.
inline std::optional<KernelPair> parse_kernel_pair(std::string_view text) {
  const auto comma = text.find(',');
  if (comma == std::string_view::npos) {
    auto spec = parse_feature_map(text);
    if (!spec) return std::nullopt;
    return KernelPair{*spec, *spec};
  }
  auto q = parse_feature_map(text.substr(0, comma));
  auto k = parse_feature_map(text.substr(comma + 1));
  if (!q || !k) return std::nullopt;
  return KernelPair{*q, *k};
}

inline std::string name(const KernelPair& pair) {
  if (pair.query == pair.key) return name(pair.query);
  return name(pair.query) + "," + name(pair.key);
}

// Named kernel pairs swept by the checks.
inline std::vector<std::pair<std::string, KernelPair>> kernel_zoo() {
  using FM = FeatureMap;
  return {
      {"cosine", KernelPair::symmetric(FM::CosineL2)},
      {"tanh-l2", {{FM::Tanh}, {FM::CosineL2}}},
      {"mean", KernelPair::symmetric(FM::MeanSqrtT)},
      {"cossim+ln", KernelPair::symmetric(FM::CosineL2, true)},
      {"tanh-l2+ln", {{FM::Tanh, true}, {FM::CosineL2, true}}},
      {"tanh-softmax", {{FM::Tanh}, {FM::SoftmaxTokens}}},
      {"sigmoid-softmax", {{FM::Sigmoid}, {FM::SoftmaxTokens}}},
      {"l1", KernelPair::symmetric(FM::L1Norm)},
  };
}

namespace detail {

template <std::floating_point S>
BasicTensor<S> divide_rows_by_norm(const BasicTensor<S>& x, int p) {
  const auto norms = norm_rows(x, p);
  BasicTensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const S denom = std::max(norms[i], static_cast<S>(kNormEpsilon));
    auto src = x.row(i);
    auto dst = y.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / denom;
  }
  return y;
}

}  // namespace detail

// phi(x) for one side of the kernel. `tokens` is the T used by MeanSqrtT.
template <std::floating_point S>
BasicTensor<S> apply_feature_map(const BasicTensor<S>& x, const FeatureMapSpec& spec, std::size_t tokens) {
  hydra::detail::require_rank2(x, "apply_feature_map");
  switch (spec.map) {
    case FeatureMap::CosineL2: return detail::divide_rows_by_norm(x, 2);
    case FeatureMap::L1Norm: return detail::divide_rows_by_norm(x, 1);
    case FeatureMap::MeanSqrtT: return scale(x, static_cast<S>(1.0 / std::sqrt(static_cast<double>(tokens))));
    case FeatureMap::Tanh: return map(x, [](S v) { return std::tanh(v); });
    case FeatureMap::Sigmoid: return map(x, [](S v) { return S{1} / (S{1} + std::exp(-v)); });
    case FeatureMap::SoftmaxTokens: return softmax(x, Normalize::each_column);
    case FeatureMap::Identity: return x;
  }
  throw SpecError("apply_feature_map: unknown feature map");
}

template <std::floating_point S>
BasicTensor<S> apply_feature_map(const BasicTensor<S>& x, const FeatureMapSpec& spec) {
  return apply_feature_map(x, spec, x.rows());
}

// Vector-Jacobian product of apply_feature_map: given x, y = phi(x) and dL/dy, returns dL/dx.
template <std::floating_point S>
BasicTensor<S> feature_map_backward(const BasicTensor<S>& x, const BasicTensor<S>& y, const BasicTensor<S>& dy,
                                    const FeatureMapSpec& spec, std::size_t tokens) {
  hydra::detail::require_same_shape(x, dy, "feature_map_backward");
  hydra::detail::require_same_shape(y, dy, "feature_map_backward");
  BasicTensor<S> dx(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  switch (spec.map) {
    case FeatureMap::CosineL2:
    case FeatureMap::L1Norm: {
      const int p = spec.map == FeatureMap::CosineL2 ? 2 : 1;
      const auto norms = norm_rows(x, p);
      for (std::size_t i = 0; i < m; ++i) {
        // Below the guard the denominator is the constant epsilon.
        if (norms[i] <= static_cast<S>(kNormEpsilon)) {
          for (std::size_t j = 0; j < n; ++j) dx(i, j) = dy(i, j) / static_cast<S>(kNormEpsilon);
          continue;
        }
        const S nrm = norms[i];
        S dot{0};
        if (p == 2) {
          for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * dy(i, j);
          for (std::size_t j = 0; j < n; ++j) dx(i, j) = (dy(i, j) - y(i, j) * dot) / nrm;
        } else {
          for (std::size_t j = 0; j < n; ++j) dot += dy(i, j) * x(i, j);
          for (std::size_t j = 0; j < n; ++j) {
            const S sgn = x(i, j) > 0 ? S{1} : (x(i, j) < 0 ? S{-1} : S{0});
            dx(i, j) = dy(i, j) / nrm - sgn * dot / (nrm * nrm);
          }
        }
      }
      return dx;
    }
    case FeatureMap::MeanSqrtT: return scale(dy, static_cast<S>(1.0 / std::sqrt(static_cast<double>(tokens))));
    case FeatureMap::Tanh:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * (S{1} - y[i] * y[i]);
      return dx;
    case FeatureMap::Sigmoid:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * y[i] * (S{1} - y[i]);
      return dx;
    case FeatureMap::SoftmaxTokens:
      for (std::size_t j = 0; j < n; ++j) {
        S dot{0};
        for (std::size_t i = 0; i < m; ++i) dot += dy(i, j) * y(i, j);
        for (std::size_t i = 0; i < m; ++i) dx(i, j) = y(i, j) * (dy(i, j) - dot);
      }
      return dx;
    case FeatureMap::Identity: return dy;
  }
  throw SpecError("feature_map_backward: unknown feature map");
}

// Elementwise operations spent by one feature map on a T x D input.
inline std::uint64_t feature_map_cost(FeatureMap map, std::uint64_t tokens, std::uint64_t dim) {
  const std::uint64_t td = tokens * dim;
  switch (map) {
    case FeatureMap::CosineL2:
    case FeatureMap::L1Norm:
    case FeatureMap::SoftmaxTokens: return 2 * td;
    case FeatureMap::MeanSqrtT:
    case FeatureMap::Tanh:
    case FeatureMap::Sigmoid: return td;
    case FeatureMap::Identity: return 0;
  }
  return 0;
}

// Zero-mean, unit-variance per row; no learned affine.
template <std::floating_point S>
BasicTensor<S> layer_norm(const BasicTensor<S>& x, double eps = kLayerNormEpsilon) {
  hydra::detail::require_rank2(x, "layer_norm");
  BasicTensor<S> y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    S mean{0};
    for (S v : r) mean += v;
    mean /= static_cast<S>(n);
    S var{0};
    for (S v : r) var += (v - mean) * (v - mean);
    var /= static_cast<S>(n);
    const S inv = S{1} / std::sqrt(var + static_cast<S>(eps));
    auto out = y.row(i);
    for (std::size_t j = 0; j < n; ++j) out[j] = (r[j] - mean) * inv;
  }
  return y;
}

template <std::floating_point S>
BasicTensor<S> layer_norm_backward(const BasicTensor<S>& x, const BasicTensor<S>& dy, double eps = kLayerNormEpsilon) {
  hydra::detail::require_same_shape(x, dy, "layer_norm_backward");
  const std::size_t n = x.cols();
  const BasicTensor<S> xhat = layer_norm(x, eps);
  BasicTensor<S> dx(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    S mean{0};
    for (S v : r) mean += v;
    mean /= static_cast<S>(n);
    S var{0};
    for (S v : r) var += (v - mean) * (v - mean);
    var /= static_cast<S>(n);
    const S inv = S{1} / std::sqrt(var + static_cast<S>(eps));
    S mean_dy{0}, mean_dy_xhat{0};
    for (std::size_t j = 0; j < n; ++j) {
      mean_dy += dy(i, j);
      mean_dy_xhat += dy(i, j) * xhat(i, j);
    }
    mean_dy /= static_cast<S>(n);
    mean_dy_xhat /= static_cast<S>(n);
    for (std::size_t j = 0; j < n; ++j) dx(i, j) = inv * (dy(i, j) - mean_dy - xhat(i, j) * mean_dy_xhat);
  }
  return dx;
}

}  // namespace hydra::kernels
