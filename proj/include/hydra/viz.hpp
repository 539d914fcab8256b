#pragma once

// Per-token contributions to the class token's hydra output, projected on a
// gradient direction g, and their rendering as a grayscale heatmap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hydra/netpbm.hpp"
#include "hydra/tensor.hpp"

namespace hydra::viz {

// score_t = sum_d phi_q_class[d] * phi_k[t][d] * v[t][d] * g[d]
inline std::vector<double> token_contributions(std::span<const double> phi_q_class, const Tensor& phi_k,
                                               const Tensor& v, std::span<const double> g) {
  hydra::detail::require_rank2(phi_k, "token_contributions");
  hydra::detail::require_same_shape(phi_k, v, "token_contributions");
  const std::size_t t = v.rows(), d = v.cols();
  if (phi_q_class.size() != d || g.size() != d) throw DimensionError("token_contributions: vector length differs from D");
  std::vector<double> gated(d);
  for (std::size_t c = 0; c < d; ++c) gated[c] = phi_q_class[c] * g[c];
  std::vector<double> scores(t, 0.0);
  for (std::size_t s = 0; s < t; ++s) {
    double acc = 0;
    for (std::size_t c = 0; c < d; ++c) acc += phi_k(s, c) * v(s, c) * gated[c];
    scores[s] = acc;
  }
  return scores;
}

struct ContributionMap {
  std::vector<double> scores;  // patch tokens only, row-major over the grid
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  double class_token_score = 0;
  double max_positive = 0;  // 0 when no score is positive
};

// Splits full per-token scores (class token first) into the class-token score and the patch grid.
inline ContributionMap make_map(std::span<const double> scores, std::size_t grid_h, std::size_t grid_w) {
  if (scores.size() != grid_h * grid_w + 1) throw DimensionError("make_map: expected class token plus h*w scores");
  ContributionMap m;
  m.class_token_score = scores[0];
  m.scores.assign(scores.begin() + 1, scores.end());
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  for (double s : m.scores) m.max_positive = std::max(m.max_positive, s);
  return m;
}

// Negative scores clamp to 0; the rest are divided by the largest positive score.
inline std::vector<double> normalize_positive(std::span<const double> scores) {
  double peak = 0;
  for (double s : scores) peak = std::max(peak, s);
  std::vector<double> out(scores.size(), 0.0);
  if (peak <= 0) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::max(scores[i], 0.0) / peak;
  return out;
}

// 8-bit heatmap of an h x w grid of scores, each cell upscaled to `cell` x `cell` pixels.
inline netpbm::GrayImage render_heatmap(std::span<const double> scores, std::size_t grid_h, std::size_t grid_w,
                                        std::size_t cell = 1) {
  if (grid_h * grid_w != scores.size()) throw DimensionError("render_heatmap: grid does not match score count");
  if (cell == 0) throw DimensionError("render_heatmap: cell size must be positive");
  const auto norm = normalize_positive(scores);
  netpbm::GrayImage img{grid_w * cell, grid_h * cell, {}};
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double s = norm[(y / cell) * grid_w + x / cell];
      img.pixels[y * img.width + x] = static_cast<std::uint8_t>(std::lround(255.0 * s));
    }
  return img;
}

inline netpbm::GrayImage render_heatmap(const ContributionMap& map, std::size_t cell = 1) {
  return render_heatmap(map.scores, map.grid_h, map.grid_w, cell);
}

}  // namespace hydra::viz
