#pragma once

// Analytic multiply-accumulate model of a ViT-B/16 classifier.
//
// Counting convention (1 FLOP == 1 MAC):
//   * every linear layer costs rows * in * out MACs;
//   * creating and applying an attention matrix cost T*T*D MACs each;
//   * a hydra layer spends 2*T*D MACs on its global feature vector and gating;
//   * softmax, LayerNorm, GELU and residual adds are free;
//   * the patch-embedding projection is left out by default, which is the
//     convention under which the published image-size sweep is reproduced.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "hydra/errors.hpp"

namespace hydra::flops {

struct VitConfig {
  std::uint64_t image_size = 224;
  std::uint64_t patch = 16;
  std::uint64_t depth = 12;
  std::uint64_t dim = 768;
  std::uint64_t heads = 12;
  std::uint64_t mlp_ratio = 4;
  std::uint64_t classes = 1000;
  bool class_token = true;
  bool count_patch_embed = false;
  // Local-window attention: every query sees its window plus the class token.
  std::uint64_t window_tokens = 14 * 14;

  std::uint64_t patches_per_side() const { return image_size / patch; }
  std::uint64_t patches() const { return patches_per_side() * patches_per_side(); }
  std::uint64_t tokens() const { return patches() + (class_token ? 1 : 0); }

  void validate() const {
    if (patch == 0 || image_size == 0 || image_size % patch != 0) {
      throw ConfigError("vit config: image size " + std::to_string(image_size) + " is not divisible by patch " +
                        std::to_string(patch));
    }
    if (depth == 0 || dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("vit config: bad depth/dim/heads");
  }
};

enum class AttentionKind { baseline, hydra, local_window };

inline std::string_view name(AttentionKind k) {
  switch (k) {
    case AttentionKind::baseline: return "baseline";
    case AttentionKind::hydra: return "hydra";
    case AttentionKind::local_window: return "local-window";
  }
  return "?";
}

inline std::optional<AttentionKind> parse_attention_kind(std::string_view s) {
  for (auto k : {AttentionKind::baseline, AttentionKind::hydra, AttentionKind::local_window})
    if (name(k) == s) return k;
  if (s == "local_window") return AttentionKind::local_window;
  return std::nullopt;
}

// Raw MAC counts (not scaled). total() sums the components.
struct FlopReport {
  std::uint64_t tokens = 0;
  std::uint64_t patch_embed = 0;
  std::uint64_t qkv_proj = 0;
  std::uint64_t out_proj = 0;
  std::uint64_t attention_matrices = 0;
  std::uint64_t mlp = 0;
  std::uint64_t head = 0;

  std::uint64_t total() const { return patch_embed + qkv_proj + out_proj + attention_matrices + mlp + head; }
};

inline constexpr double kGiga = 1e9;

inline double gmacs(std::uint64_t macs) { return static_cast<double>(macs) / kGiga; }

// Percent of total MACs spent creating and applying attention matrices.
inline double attention_fraction(const FlopReport& r) {
  const auto total = r.total();
  if (total == 0) throw PreconditionError("attention_fraction: empty report");
  return 100.0 * static_cast<double>(r.attention_matrices) / static_cast<double>(total);
}

// MACs of one layer's token mixing for the given kind.
inline std::uint64_t attention_layer_macs(const VitConfig& cfg, AttentionKind kind) {
  const std::uint64_t t = cfg.tokens(), d = cfg.dim;
  switch (kind) {
    case AttentionKind::baseline: return 2 * t * t * d;
    case AttentionKind::hydra: return 2 * t * d;
    case AttentionKind::local_window: {
      const std::uint64_t keys = std::min(t, cfg.window_tokens + (cfg.class_token ? 1 : 0));
      return 2 * t * keys * d;
    }
  }
  return 0;
}

// Mixed models replace the last `replaced` layers with `variant`; the rest stay baseline.
inline FlopReport count_vit_flops(const VitConfig& cfg, AttentionKind variant, std::uint64_t replaced) {
  cfg.validate();
  if (replaced > cfg.depth) {
    throw PreconditionError("count_vit_flops: replaced=" + std::to_string(replaced) + " exceeds depth " +
                            std::to_string(cfg.depth));
  }
  const std::uint64_t t = cfg.tokens(), d = cfg.dim;
  FlopReport r;
  r.tokens = t;
  if (cfg.count_patch_embed) r.patch_embed = cfg.patches() * (cfg.patch * cfg.patch * 3) * d;
  r.qkv_proj = cfg.depth * 3 * t * d * d;
  r.out_proj = cfg.depth * t * d * d;
  r.mlp = cfg.depth * 2 * t * d * (cfg.mlp_ratio * d);
  r.head = d * cfg.classes;
  const std::uint64_t kept = cfg.depth - replaced;
  r.attention_matrices =
      kept * attention_layer_macs(cfg, AttentionKind::baseline) + replaced * attention_layer_macs(cfg, variant);
  return r;
}

inline FlopReport count_vit_flops(std::uint64_t image_size, AttentionKind variant, std::uint64_t replaced) {
  VitConfig cfg;
  cfg.image_size = image_size;
  return count_vit_flops(cfg, variant, replaced);
}

}  // namespace hydra::flops
