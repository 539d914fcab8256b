#pragma once

// A small pre-LN vision transformer whose layers each pick their own attention
// variant, trained with plain SGD on procedurally generated texture images.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/attention.hpp"
#include "hydra/autodiff.hpp"
#include "hydra/netpbm.hpp"
#include "hydra/tensor.hpp"

namespace hydra::toy {

using attention::AttentionLayerSpec;
using attention::Variant;
using kernels::FeatureMap;
using kernels::KernelPair;

// ---- replacement schedules --------------------------------------------------

enum class Strategy { front, back, interleave };

inline std::string_view name(Strategy s) {
  switch (s) {
    case Strategy::front: return "front";
    case Strategy::back: return "back";
    case Strategy::interleave: return "interleave";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (auto v : {Strategy::front, Strategy::back, Strategy::interleave})
    if (name(v) == s) return v;
  return std::nullopt;
}

// Which of `depth` layers (index 0 = first layer) become Hydra when replacing `n` of them.
// interleave alternates from the last layer backwards (L, L-2, ...) and, once every other
// layer is taken, fills the remaining gaps from the back.
inline std::vector<Variant> replacement_schedule(Strategy strategy, std::size_t n, std::size_t depth) {
  if (n > depth) {
    throw SpecError("replacement_schedule: cannot replace " + std::to_string(n) + " of " + std::to_string(depth) +
                    " layers");
  }
  std::vector<Variant> layers(depth, Variant::MSA);
  switch (strategy) {
    case Strategy::front:
      for (std::size_t i = 0; i < n; ++i) layers[i] = Variant::Hydra;
      break;
    case Strategy::back:
      for (std::size_t i = 0; i < n; ++i) layers[depth - 1 - i] = Variant::Hydra;
      break;
    case Strategy::interleave: {
      std::size_t placed = 0;
      for (std::size_t pos = depth; pos-- > 0 && placed < n;) {
        if ((depth - 1 - pos) % 2 == 0) {
          layers[pos] = Variant::Hydra;
          ++placed;
        }
      }
      for (std::size_t pos = depth; pos-- > 0 && placed < n;) {
        if (layers[pos] == Variant::MSA) {
          layers[pos] = Variant::Hydra;
          ++placed;
        }
      }
      break;
    }
  }
  return layers;
}

// ---- configuration ------------------------------------------------------------

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;  // used by MSA/MLA layers
  std::size_t patch = 8;
  std::size_t image_size = 32;
  std::size_t classes = 2;
  std::size_t mlp_ratio = 2;
  std::vector<AttentionLayerSpec> layer_specs;

  double learning_rate = 0.01;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::size_t train_size = 128;  // one epoch = train_size / batch_size steps
  std::size_t val_size = 64;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch; }
  std::size_t tokens() const { return grid() * grid() + 1; }
  std::size_t patch_dim() const { return patch * patch * 3; }
  std::size_t steps_per_epoch() const { return std::max<std::size_t>(1, train_size / batch_size); }

  void validate() const {
    if (patch == 0 || image_size % patch != 0) throw ConfigError("model config: image size must be a multiple of patch");
    if (depth == 0 || dim == 0 || classes < 2) throw ConfigError("model config: need depth, dim > 0 and >= 2 classes");
    if (layer_specs.size() != depth) {
      throw ConfigError("model config: " + std::to_string(layer_specs.size()) + " layer specs for depth " +
                        std::to_string(depth));
    }
    for (const auto& s : layer_specs) {
      s.validate();
      if (s.dim != dim || s.tokens != tokens()) throw ConfigError("model config: layer spec dims differ from model");
    }
    if (batch_size == 0 || train_size < batch_size) throw ConfigError("model config: batch larger than training set");
  }
};

inline AttentionLayerSpec layer_spec(const ModelConfig& cfg, Variant variant, const KernelPair& kernels) {
  AttentionLayerSpec s;
  s.variant = variant;
  s.tokens = cfg.tokens();
  s.dim = cfg.dim;
  s.kernels = kernels;
  s.heads = (variant == Variant::MSA || variant == Variant::MLA) ? cfg.heads : cfg.dim;
  if (variant == Variant::AFTSimple) s.kernels = {{FeatureMap::Sigmoid}, {FeatureMap::SoftmaxTokens}};
  if (variant == Variant::PolyNL) s.kernels = KernelPair::symmetric(FeatureMap::MeanSqrtT);
  return s;
}

// Every layer standard softmax attention.
inline ModelConfig baseline(ModelConfig cfg) {
  cfg.layer_specs.assign(cfg.depth, layer_spec(cfg, Variant::MSA, KernelPair::symmetric(FeatureMap::CosineL2)));
  return cfg;
}

inline ModelConfig with_layers(ModelConfig cfg, const std::vector<Variant>& layers,
                               const KernelPair& kernels = KernelPair::symmetric(FeatureMap::CosineL2)) {
  cfg.depth = layers.size();
  cfg.layer_specs.clear();
  for (Variant v : layers) cfg.layer_specs.push_back(layer_spec(cfg, v, kernels));
  return cfg;
}

inline ModelConfig with_schedule(ModelConfig cfg, Strategy strategy, std::size_t n,
                                 const KernelPair& kernels = KernelPair::symmetric(FeatureMap::CosineL2)) {
  return with_layers(cfg, replacement_schedule(strategy, n, cfg.depth), kernels);
}

// ---- synthetic data -----------------------------------------------------------

// Images are image_size x (image_size * 3) tensors, interleaved RGB in [0, 1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t image_size = 0;
  std::size_t classes = 0;

  std::size_t size() const { return images.size(); }
};

// Class 0: horizontal stripes, 1: vertical, 2: diagonal, 3: checkerboard. Random period,
// phase, colours and pixel noise; labels cycle so the set is balanced.
inline Dataset make_texture_dataset(std::size_t count, std::size_t image_size, std::size_t classes, std::uint64_t seed) {
  if (classes < 2 || classes > 4) throw ConfigError("texture dataset: 2 to 4 classes supported");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> period_dist(3, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  Dataset ds;
  ds.image_size = image_size;
  ds.classes = classes;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t label = n % classes;
    const int period = period_dist(rng);
    const int phase = static_cast<int>(unit(rng) * period);
    double fg[3], bg[3];
    for (int c = 0; c < 3; ++c) {
      fg[c] = 0.6 + 0.4 * unit(rng);
      bg[c] = 0.4 * unit(rng);
    }
    Tensor img({image_size, image_size * 3});
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) {
        const int yi = static_cast<int>(y) + phase, xi = static_cast<int>(x) + phase;
        bool on = false;
        switch (label) {
          case 0: on = (yi / period) % 2 == 0; break;
          case 1: on = (xi / period) % 2 == 0; break;
          case 2: on = ((xi + yi) / period) % 2 == 0; break;
          default: on = ((xi / period) + (yi / period)) % 2 == 0; break;
        }
        for (int c = 0; c < 3; ++c) img(y, x * 3 + c) = std::clamp((on ? fg[c] : bg[c]) + noise(rng), 0.0, 1.0);
      }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

// (image_size / patch)^2 rows of flattened patch x patch x 3 pixels, row-major over the grid.
inline Tensor patchify(const Tensor& image, std::size_t patch) {
  const std::size_t size = image.rows();
  if (image.cols() != size * 3 || size % patch != 0) throw DimensionError("patchify: image shape does not match patch");
  const std::size_t grid = size / patch;
  Tensor out({grid * grid, patch * patch * 3});
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto dst = out.row(gy * grid + gx);
      std::size_t k = 0;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch * 3; ++px) dst[k++] = image(gy * patch + py, gx * patch * 3 + px);
    }
  return out;
}

inline Tensor image_from_ppm(const netpbm::RgbImage& img) {
  if (img.width != img.height) throw DimensionError("image_from_ppm: only square images are supported");
  Tensor t({img.height, img.width * 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

inline netpbm::RgbImage image_to_ppm(const Tensor& image) {
  netpbm::RgbImage img{image.cols() / 3, image.rows(), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  return img;
}

// ---- parameters ----------------------------------------------------------------

namespace param {
// Global parameters come first, then kBlock entries per layer, then the final LN and head.
enum Global : std::size_t { patch_w, patch_b, cls, pos, kGlobal };
enum Block : std::size_t { ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2, kBlock };
enum Final : std::size_t { lnf_g, lnf_b, head_w, head_b, kFinal };

inline std::size_t block(std::size_t layer, Block p) { return kGlobal + layer * kBlock + p; }
inline std::size_t tail(std::size_t depth, Final p) { return kGlobal + depth * kBlock + p; }
}  // namespace param

struct Model {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }
};

// Truncated normal (|z| <= 2) with standard deviation 0.02; biases zero, LN gains one.
inline Model init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
      double z;
      do z = normal(rng);
      while (std::abs(z) > 2.0);
      v = 0.02 * z;
    }
    return t;
  };
  const std::size_t d = cfg.dim, hidden = cfg.dim * cfg.mlp_ratio;
  Model m;
  m.config = cfg;
  auto add = [&](std::string name, Tensor t) {
    m.names.push_back(std::move(name));
    m.params.push_back(std::move(t));
  };
  add("patch_w", trunc_normal({cfg.patch_dim(), d}));
  add("patch_b", Tensor({d}));
  add("cls", trunc_normal({1, d}));
  add("pos", trunc_normal({cfg.tokens(), d}));
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    add(p + "ln1_g", Tensor({d}, 1.0));
    add(p + "ln1_b", Tensor({d}));
    for (const char* w : {"q", "k", "v"}) {
      add(p + "w" + w, trunc_normal({d, d}));
      add(p + "b" + w, Tensor({d}));
    }
    add(p + "wo", trunc_normal({d, d}));
    add(p + "bo", Tensor({d}));
    add(p + "ln2_g", Tensor({d}, 1.0));
    add(p + "ln2_b", Tensor({d}));
    add(p + "w1", trunc_normal({d, hidden}));
    add(p + "b1", Tensor({hidden}));
    add(p + "w2", trunc_normal({hidden, d}));
    add(p + "b2", Tensor({d}));
  }
  add("lnf_g", Tensor({d}, 1.0));
  add("lnf_b", Tensor({d}));
  add("head_w", trunc_normal({d, cfg.classes}));
  add("head_b", Tensor({cfg.classes}));
  return m;
}

// ---- forward pass ---------------------------------------------------------------

// Tape handles of one attention layer's inputs and its token-mixing output
// (before any "+ln" normalisation and before the output projection).
struct LayerTrace {
  ad::Var q, k, v, mixed;
};

namespace detail {

inline ad::Var linear(ad::Var x, ad::Var w, ad::Var b) {
  return ad::add(ad::matmul(x, w), ad::broadcast_rows(b, ad::value(x).rows()));
}

inline ad::Var affine_layer_norm(ad::Var x, ad::Var g, ad::Var b) {
  const std::size_t t = ad::value(x).rows();
  return ad::add(ad::mul(ad::layer_norm(x), ad::broadcast_rows(g, t)), ad::broadcast_rows(b, t));
}

inline ad::Var mix(const AttentionLayerSpec& spec, ad::Var h, std::span<const ad::Var> p, std::size_t layer,
                   LayerTrace* trace) {
  using param::block;
  auto P = [&](param::Block which) { return p[block(layer, which)]; };
  ad::Var q = spec.variant == Variant::PolyNL ? h : linear(h, P(param::wq), P(param::bq));
  ad::Var k = linear(h, P(param::wk), P(param::bk));
  ad::Var v = linear(h, P(param::wv), P(param::bv));
  ad::Var mixed{}, out{};
  switch (spec.variant) {
    case Variant::MSA:
      out = mixed = ad::msa(q, k, v, spec.heads);
      break;
    case Variant::MLA:
      out = mixed = ad::mla(q, k, v, spec.heads, spec.kernels);
      break;
    case Variant::Hydra:
    case Variant::AFTSimple:
    case Variant::PolyNL:
      mixed = ad::hydra_attention(q, k, v, spec.kernels.without_layer_norm());
      out = spec.kernels.post_layer_norm() ? ad::layer_norm(mixed) : mixed;
      break;
  }
  if (trace) *trace = {q, k, v, mixed};
  return out;
}

}  // namespace detail

// Logits (1 x classes) for one image given its patches and the model parameters on `tape`.
inline ad::Var forward_sample(ad::Tape& tape, const ModelConfig& cfg, std::span<const ad::Var> p, const Tensor& patches,
                              std::vector<LayerTrace>* traces = nullptr) {
  using namespace param;
  if (patches.rows() + 1 != cfg.tokens() || patches.cols() != cfg.patch_dim()) {
    throw DimensionError("forward: patches " + shape_str(patches.shape()) + " do not match the model");
  }
  ad::Var x = detail::linear(tape.constant(patches), p[patch_w], p[patch_b]);
  x = ad::add(ad::concat_rows({p[cls], x}), p[pos]);
  if (traces) traces->assign(cfg.depth, {});
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto P = [&](Block which) { return p[block(l, which)]; };
    ad::Var h = detail::affine_layer_norm(x, P(ln1_g), P(ln1_b));
    ad::Var a = detail::mix(cfg.layer_specs[l], h, p, l, traces ? &(*traces)[l] : nullptr);
    x = ad::add(x, detail::linear(a, P(wo), P(bo)));
    ad::Var h2 = detail::affine_layer_norm(x, P(ln2_g), P(ln2_b));
    x = ad::add(x, detail::linear(ad::gelu(detail::linear(h2, P(w1), P(b1))), P(w2), P(b2)));
  }
  ad::Var c = ad::take_row(detail::affine_layer_norm(x, p[tail(cfg.depth, lnf_g)], p[tail(cfg.depth, lnf_b)]), 0);
  return detail::linear(c, p[tail(cfg.depth, head_w)], p[tail(cfg.depth, head_b)]);
}

inline std::vector<ad::Var> load_params(ad::Tape& tape, const Model& model, bool track) {
  std::vector<ad::Var> vars;
  vars.reserve(model.params.size());
  for (const auto& t : model.params) vars.push_back(track ? tape.input(t) : tape.constant(t));
  return vars;
}

inline void require_image(const ModelConfig& cfg, const Tensor& image) {
  if (image.rank() != 2 || image.rows() != cfg.image_size || image.cols() != cfg.image_size * 3) {
    throw DimensionError("forward: image " + shape_str(image.shape()) + " does not match configured size " +
                         std::to_string(cfg.image_size));
  }
}

// Logits for a batch of images: batch x classes.
inline Tensor forward(const Model& model, std::span<const Tensor> images) {
  const auto& cfg = model.config;
  Tensor logits({images.size(), cfg.classes});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_image(cfg, images[i]);
    ad::Tape tape;
    auto p = load_params(tape, model, false);
    const Tensor& z = tape.value(forward_sample(tape, cfg, p, patchify(images[i], cfg.patch)));
    std::copy(z.data().begin(), z.data().end(), logits.row(i).begin());
  }
  return logits;
}

// Mean cross entropy of the batch recorded on `tape`.
inline ad::Var batch_loss(ad::Tape& tape, const ModelConfig& cfg, std::span<const ad::Var> p, const Dataset& data,
                          std::span<const std::size_t> indices) {
  std::vector<ad::Var> losses;
  for (std::size_t idx : indices) {
    require_image(cfg, data.images[idx]);
    losses.push_back(ad::cross_entropy(forward_sample(tape, cfg, p, patchify(data.images[idx], cfg.patch)), data.labels[idx]));
  }
  ad::Var total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
  return ad::scale(total, 1.0 / static_cast<double>(losses.size()));
}

inline double accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0;
  const Tensor logits = forward(model, data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = logits.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---- training --------------------------------------------------------------------

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<double> step_losses;   // mean batch loss per SGD step
  std::vector<double> epoch_losses;  // mean of the step losses within each epoch
  double train_accuracy = 0;
  double val_accuracy = 0;
  double wall_seconds = 0;

  // Everything but wall time.
  bool same_outcome(const TrainReport& o) const {
    return seed == o.seed && step_losses == o.step_losses && epoch_losses == o.epoch_losses &&
           train_accuracy == o.train_accuracy && val_accuracy == o.val_accuracy;
  }
};

// Plain SGD with a fixed step; epochs reshuffle the training set with the config seed.
inline TrainReport train(const ModelConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                         Model* trained = nullptr) {
  cfg.validate();
  if (train_set.size() < cfg.batch_size) throw ConfigError("train: training set smaller than a batch");
  std::vector<std::size_t> per_class(cfg.classes, 0);
  for (std::size_t l : train_set.labels) {
    if (l >= cfg.classes) throw ConfigError("train: label out of range");
    ++per_class[l];
  }
  if (std::any_of(per_class.begin(), per_class.end(), [&](std::size_t c) { return c != per_class.front(); })) {
    throw ConfigError("train: dataset is not balanced");
  }

  const auto start = std::chrono::steady_clock::now();
  Model model = init_model(cfg);
  TrainReport report;
  report.seed = cfg.seed;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = std::max<std::size_t>(1, train_set.size() / cfg.batch_size);
  double epoch_sum = 0;
  std::size_t epoch_steps = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t slot = step % per_epoch;
    if (slot == 0) std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::span<const std::size_t> batch(order.data() + slot * cfg.batch_size, cfg.batch_size);

    ad::Tape tape;
    auto p = load_params(tape, model, true);
    double value = 0;
    ad::Gradients grads;
    try {
      ad::Var loss = batch_loss(tape, cfg, p, train_set, batch);
      value = tape.value(loss).item();
      if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
      grads = tape.backward(loss);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("train: diverged at step ") + std::to_string(step) + ": " + e.what(), step / per_epoch);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Tensor& g = grads.at(p[i]);
      auto w = model.params[i].data();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.learning_rate * g[j];
    }
    report.step_losses.push_back(value);
    epoch_sum += value;
    if (++epoch_steps == per_epoch || step + 1 == cfg.steps) {
      report.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
      epoch_sum = 0;
      epoch_steps = 0;
    }
  }
  report.train_accuracy = accuracy(model, train_set);
  report.val_accuracy = accuracy(model, val_set);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) *trained = std::move(model);
  return report;
}

// Generates the texture datasets from the config seed.
inline Dataset training_data(const ModelConfig& cfg) {
  return make_texture_dataset(cfg.train_size, cfg.image_size, cfg.classes, cfg.seed * 2 + 1);
}
inline Dataset validation_data(const ModelConfig& cfg) {
  return make_texture_dataset(cfg.val_size, cfg.image_size, cfg.classes, cfg.seed * 2 + 2);
}

inline TrainReport train(const ModelConfig& cfg, Model* trained = nullptr) {
  return train(cfg, training_data(cfg), validation_data(cfg), trained);
}

// Mean of the last `window` step losses below the mean of the first `window`.
inline bool loss_decreased(std::span<const double> losses, std::size_t window = 10) {
  if (losses.size() < 2 * window) return false;
  const double head = std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
  const double tail = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(window), losses.end(), 0.0);
  return tail < head;
}

// ---- head sweep ----------------------------------------------------------------------

struct HeadSweepRow {
  std::size_t heads = 0;
  std::uint64_t mla_macs = 0;
  std::uint64_t msa_macs = 0;
  std::uint64_t hydra_macs = 0;
  bool trainable = false;
  double final_loss = 0;
};

// For each H: instrumented MLA/MSA attention MACs at the model's T x D, and whether an
// all-MLA model with H heads trains for cfg.steps without diverging.
inline std::vector<HeadSweepRow> head_sweep(const ModelConfig& base, std::span<const std::size_t> head_values,
                                            bool run_training = true) {
  const std::size_t t = base.tokens(), d = base.dim;
  const auto q = random_uniform({t, d}, base.seed + 1), k = random_uniform({t, d}, base.seed + 2),
             v = random_uniform({t, d}, base.seed + 3);
  attention::OpStats hydra_stats;
  attention::hydra(q, k, v, KernelPair::symmetric(FeatureMap::CosineL2), &hydra_stats);
  std::vector<HeadSweepRow> rows;
  for (std::size_t h : head_values) {
    if (h == 0 || d % h != 0) throw SpecError("head_sweep: H=" + std::to_string(h) + " does not divide D=" + std::to_string(d));
    HeadSweepRow row;
    row.heads = h;
    attention::OpStats mla_stats, msa_stats;
    attention::mla(q, k, v, h, KernelPair::symmetric(FeatureMap::CosineL2), &mla_stats);
    attention::msa(q, k, v, h, &msa_stats);
    row.mla_macs = mla_stats.macs;
    row.msa_macs = msa_stats.macs;
    row.hydra_macs = hydra_stats.macs;
    if (run_training) {
      ModelConfig cfg = base;
      cfg.heads = h;
      cfg = with_layers(cfg, std::vector<Variant>(cfg.depth, Variant::MLA));
      try {
        const auto rep = train(cfg);
        row.final_loss = rep.step_losses.back();
        row.trainable = std::all_of(rep.step_losses.begin(), rep.step_losses.end(), [](double l) { return std::isfinite(l); });
      } catch (const TrainingError&) {
        row.trainable = false;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

// ---- weight files ----------------------------------------------------------------------
//
// Layout (little-endian):
//   8 bytes   magic "HYDRAWT1"
//   u32       length of the config block, then that many bytes of key=value lines
//   u32       tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 extent per axis
//   raw doubles of every tensor, in table order

inline constexpr char kWeightsMagic[8] = {'H', 'Y', 'D', 'R', 'A', 'W', 'T', '1'};

inline std::string layer_token(const AttentionLayerSpec& s) {
  std::string out(attention::name(s.variant));
  out += ":" + std::to_string(s.heads) + ":" + kernels::name(s.kernels);
  return out;
}

inline AttentionLayerSpec parse_layer_token(const ModelConfig& cfg, std::string_view tok) {
  const auto c1 = tok.find(':');
  const auto c2 = tok.find(':', c1 + 1);
  if (c1 == std::string_view::npos || c2 == std::string_view::npos) throw FormatError("weights: bad layer entry");
  auto variant = attention::parse_variant(tok.substr(0, c1));
  auto pair = kernels::parse_kernel_pair(tok.substr(c2 + 1));
  if (!variant || !pair) throw FormatError("weights: bad layer entry " + std::string(tok));
  AttentionLayerSpec s = layer_spec(cfg, *variant, *pair);
  s.heads = std::stoul(std::string(tok.substr(c1 + 1, c2 - c1 - 1)));
  s.kernels = *pair;
  return s;
}

inline std::string config_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "depth=" << cfg.depth << "\ndim=" << cfg.dim << "\nheads=" << cfg.heads << "\npatch=" << cfg.patch
     << "\nimage_size=" << cfg.image_size << "\nclasses=" << cfg.classes << "\nmlp_ratio=" << cfg.mlp_ratio
     << "\nseed=" << cfg.seed << '\n';
  for (std::size_t l = 0; l < cfg.layer_specs.size(); ++l) os << "layer" << l << '=' << layer_token(cfg.layer_specs[l]) << '\n';
  return os.str();
}

inline ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const char* key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("weights: missing config key ") + key);
    return std::stoull(it->second);
  };
  ModelConfig cfg;
  cfg.depth = num("depth");
  cfg.dim = num("dim");
  cfg.heads = num("heads");
  cfg.patch = num("patch");
  cfg.image_size = num("image_size");
  cfg.classes = num("classes");
  cfg.mlp_ratio = num("mlp_ratio");
  cfg.seed = num("seed");
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto it = kv.find("layer" + std::to_string(l));
    if (it == kv.end()) throw FormatError("weights: missing layer entry");
    cfg.layer_specs.push_back(parse_layer_token(cfg, it->second));
  }
  return cfg;
}

namespace detail {
template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("weights: truncated file");
  return v;
}
}  // namespace detail

inline void save_weights(std::ostream& out, const Model& m) {
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  const std::string cfg = config_text(m.config);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.params.size()));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.names[i].size()));
    out.write(m.names[i].data(), static_cast<std::streamsize>(m.names[i].size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.params[i].rank()));
    for (std::size_t e : m.params[i].shape()) detail::put<std::uint64_t>(out, e);
  }
  for (const auto& t : m.params)
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Model load_weights(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0) throw FormatError("weights: bad magic");
  std::string cfg_text(detail::get<std::uint32_t>(in), '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  Model m;
  m.config = parse_config_text(cfg_text);
  const auto count = detail::get<std::uint32_t>(in);
  std::vector<Shape> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(detail::get<std::uint32_t>(in));
    for (auto& e : shape) e = detail::get<std::uint64_t>(in);
    m.names.push_back(std::move(name));
    shapes.push_back(std::move(shape));
  }
  for (auto& shape : shapes) {
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw FormatError("weights: truncated tensor data");
    m.params.push_back(std::move(t));
  }
  const Model reference = init_model(m.config);
  if (reference.names != m.names) throw FormatError("weights: tensor table does not match the configured model");
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (reference.params[i].shape() != m.params[i].shape()) throw FormatError("weights: shape mismatch for " + m.names[i]);
  return m;
}

inline void save_weights(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("weights: cannot write " + path);
  save_weights(out, m);
}

inline Model load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("weights: cannot open " + path);
  return load_weights(in);
}

}  // namespace hydra::toy
