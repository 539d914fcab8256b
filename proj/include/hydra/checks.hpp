#pragma once

// Runtime invariant suite behind `hydra_lab check`. Each module contributes a
// list of named checks; every check returns pass/fail with a short detail.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/attention.hpp"
#include "hydra/autodiff.hpp"
#include "hydra/bench.hpp"
#include "hydra/flops.hpp"
#include "hydra/kernels.hpp"
#include "hydra/reference.hpp"
#include "hydra/tensor.hpp"
#include "hydra/toymodel.hpp"
#include "hydra/viz.hpp"

namespace hydra::checks {

using kernels::FeatureMap;
using kernels::KernelPair;

struct CheckResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
};

using HydraFn = std::function<Tensor(const Tensor&, const Tensor&, const Tensor&, const KernelPair&)>;

struct CheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;  // random trials per equivalence check
  // The hydra implementation under test; swapped out to exercise the failure path.
  HydraFn hydra = [](const Tensor& q, const Tensor& k, const Tensor& v, const KernelPair& p) {
    return attention::hydra(q, k, v, p);
  };
};

// Same as hydra but forgets to normalise K: used by `check --inject-fault hydra`.
inline Tensor broken_hydra(const Tensor& q, const Tensor& k, const Tensor& v, const KernelPair& p) {
  KernelPair wrong = p;
  wrong.key.map = FeatureMap::Identity;
  return attention::hydra(q, k, v, wrong);
}

inline const std::vector<std::string_view>& modules() {
  static const std::vector<std::string_view> names = {"tensor", "autodiff", "kernels", "attention",
                                                      "flops",  "toymodel", "bench",   "viz"};
  return names;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

class Suite {
 public:
  explicit Suite(std::string module) : module_(std::move(module)) {}

  // Records a bound check: passes when `value <= bound`.
  void bound(std::string name, double value, double limit) {
    results_.push_back({module_, std::move(name), value <= limit, "value " + fmt(value) + " (limit " + fmt(limit) + ")"});
  }
  void expect(std::string name, bool ok, std::string detail = {}) {
    results_.push_back({module_, std::move(name), ok, std::move(detail)});
  }
  // Runs body, turning an escaped exception into a failure.
  template <typename F>
  void guarded(const std::string& name, F&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      results_.push_back({module_, name, false, std::string("threw: ") + e.what()});
    }
  }
  std::vector<CheckResult> take() { return std::move(results_); }

 private:
  std::string module_;
  std::vector<CheckResult> results_;
};

inline Tensor rand(std::size_t r, std::size_t c, std::uint64_t seed) { return random_uniform({r, c}, seed); }

inline std::vector<CheckResult> check_tensor(const CheckOptions& o) {
  Suite s("tensor");
  s.guarded("matmul-oracle", [&] {
    double worst = 0;
    for (std::size_t n : {1, 3, 7, 16}) {
      auto a = rand(n, n + 1, o.seed + n), b = rand(n + 1, n, o.seed + 100 + n);
      worst = std::max(worst, max_abs_diff(matmul(a, b), reference::matmul(a, b)));
    }
    s.bound("matmul equals naive triple loop", worst, 1e-12);
  });
  s.guarded("associativity", [&] {
    double worst = 0;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      auto a = rand(8, 8, o.seed + 3 * i), b = rand(8, 8, o.seed + 3 * i + 1), c = rand(8, 8, o.seed + 3 * i + 2);
      worst = std::max(worst, max_rel_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))));
    }
    s.bound("(AB)C == A(BC) relative", worst, 1e-9);
  });
  s.guarded("softmax", [&] {
    auto x = scale(rand(6, 9, o.seed + 5), 1e4);
    auto y = softmax(x, Normalize::each_row);
    double worst = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double total = 0;
      for (double v : y.row(i)) total += v;
      worst = std::max(worst, std::abs(total - 1.0));
    }
    s.bound("softmax rows sum to 1 at magnitude 1e4", worst, 1e-12);
  });
  s.guarded("reduce_sum", [&] {
    auto x = rand(16, 16, o.seed + 7);
    auto r = reduce_sum(x, 0);
    bool exact = true;
    for (std::size_t j = 0; j < 16; ++j) {
      double acc = 0;
      for (std::size_t i = 0; i < 16; ++i) acc += x(i, j);
      exact = exact && acc == r[j];
    }
    s.expect("reduce_sum equals scalar loop", exact);
  });
  return s.take();
}

inline std::vector<CheckResult> check_autodiff(const CheckOptions& o) {
  Suite s("autodiff");
  using ad::Var;
  struct Case {
    std::string name;
    ad::ScalarFn f;
    std::size_t inputs;
  };
  const Tensor w = rand(6, 6, o.seed + 991);
  std::vector<Case> cases = {
      {"matmul", [](ad::Tape&, std::span<const Var> x) { return ad::sum(ad::mul(ad::matmul(x[0], x[1]), ad::matmul(x[0], x[1]))); }, 2},
      {"softmax", [&](ad::Tape& t, std::span<const Var> x) { return ad::sum(ad::mul(ad::softmax(x[0], Normalize::each_row), t.constant(w))); }, 1},
      {"softmax-columns", [&](ad::Tape& t, std::span<const Var> x) { return ad::sum(ad::mul(ad::softmax(x[0], Normalize::each_column), t.constant(w))); }, 1},
      {"ewise", [](ad::Tape&, std::span<const Var> x) { return ad::sum(ad::mul(ad::sub(x[0], x[1]), ad::add(x[0], x[1]))); }, 2},
      {"reduce_sum", [](ad::Tape&, std::span<const Var> x) { auto r = ad::reduce_sum(x[0], 0, true); return ad::sum(ad::matmul(r, ad::transpose(r))); }, 1},
      {"norm_rows", [](ad::Tape&, std::span<const Var> x) { return ad::sum(ad::scale(ad::add(ad::norm_rows(x[0], 2), ad::norm_rows(x[0], 1)), 0.5)); }, 1},
      {"layer_norm", [&](ad::Tape& t, std::span<const Var> x) { return ad::sum(ad::mul(ad::layer_norm(x[0]), t.constant(w))); }, 1},
  };
  using FM = FeatureMap;
  for (FM map : {FM::CosineL2, FM::MeanSqrtT, FM::Tanh, FM::Sigmoid, FM::SoftmaxTokens, FM::L1Norm, FM::Identity}) {
    const kernels::FeatureMapSpec spec{map};
    cases.push_back({"phi " + kernels::name(spec), [spec, &w](ad::Tape& t, std::span<const Var> x) {
                       return ad::sum(ad::mul(ad::feature_map(x[0], spec), t.constant(w)));
                     }, 1});
  }
  for (const auto& [kname, pair] : kernels::kernel_zoo()) {
    const KernelPair p = pair;
    cases.push_back({"hydra " + kname, [p, &w](ad::Tape& t, std::span<const Var> x) {
                       return ad::sum(ad::mul(ad::hydra_attention(x[0], x[1], x[2], p), t.constant(w)));
                     }, 3});
  }
  cases.push_back({"msa", [&w](ad::Tape& t, std::span<const Var> x) {
                     return ad::sum(ad::mul(ad::msa(x[0], x[1], x[2], 2), t.constant(w)));
                   }, 3});
  cases.push_back({"mla", [&w](ad::Tape& t, std::span<const Var> x) {
                     return ad::sum(ad::mul(ad::mla(x[0], x[1], x[2], 3, KernelPair::symmetric(FM::CosineL2, true)), t.constant(w)));
                   }, 3});
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const std::string& name = cases[c].name;
    s.guarded(name, [&] {
      std::vector<Tensor> xs;
      for (std::size_t i = 0; i < cases[c].inputs; ++i) xs.push_back(rand(6, 6, o.seed + 31 * c + i));
      auto g = ad::grad(cases[c].f, xs);
      auto fd = ad::finite_diff(cases[c].f, xs, 1e-5);
      double worst = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) worst = std::max(worst, max_rel_error(g[i], fd[i]));
      s.bound("grad vs finite differences: " + name, worst, 1e-4);
    });
  }
  s.guarded("linearity", [&] {
    auto x = rand(4, 5, o.seed + 77);
    auto f1 = [](ad::Tape&, std::span<const Var> v) { return ad::sum(ad::mul(v[0], v[0])); };
    auto f2 = [](ad::Tape&, std::span<const Var> v) { return ad::sum(ad::softmax(ad::scale(v[0], 3.0), Normalize::each_column)); };
    auto both = [&](ad::Tape& t, std::span<const Var> v) { return ad::add(f1(t, v), f2(t, v)); };
    std::vector<Tensor> in{x};
    s.bound("grad(f+g) == grad f + grad g", max_abs_diff(ad::grad(both, in)[0], add(ad::grad(f1, in)[0], ad::grad(f2, in)[0])), 1e-12);
  });
  s.guarded("replay", [&] {
    ad::Tape tape;
    auto q = tape.input(rand(5, 4, o.seed + 1)), k = tape.input(rand(5, 4, o.seed + 2)), v = tape.input(rand(5, 4, o.seed + 3));
    ad::sum(ad::hydra_attention(q, k, v, KernelPair::symmetric(FeatureMap::CosineL2)));
    auto replayed = tape.replay();
    bool same = true;
    for (std::size_t i = 0; i < tape.size(); ++i) same = same && replayed[i] == tape.node(i).value;
    s.expect("replay reproduces activations bit-for-bit", same);
  });
  return s.take();
}

inline std::vector<CheckResult> check_kernels(const CheckOptions& o) {
  Suite s("kernels");
  s.guarded("cosine", [&] {
    auto x = rand(7, 5, o.seed + 11);
    for (std::size_t j = 0; j < 5; ++j) x(3, j) = 0.0;
    auto y = kernels::apply_feature_map(x, {FeatureMap::CosineL2}, 7);
    auto n = norm_rows(y, 2);
    bool ok = true;
    for (std::size_t i = 0; i < n.size(); ++i) ok = ok && (n[i] == 0.0 || std::abs(n[i] - 1.0) <= 1e-9);
    s.expect("cosine rows have unit norm (or zero)", ok);
    auto y2 = kernels::apply_feature_map(scale(x, 3.7), {FeatureMap::CosineL2}, 7);
    s.bound("cosine is scale invariant", max_abs_diff(y, y2), 1e-12);
  });
  s.guarded("softmax-tokens", [&] {
    auto y = kernels::apply_feature_map(scale(rand(6, 4, o.seed + 12), 50.0), {FeatureMap::SoftmaxTokens}, 6);
    auto sums = reduce_sum(y, 0);
    double worst = 0;
    for (double v : sums.data()) worst = std::max(worst, std::abs(v - 1.0));
    s.bound("softmax-over-tokens columns sum to 1", worst, 1e-12);
  });
  s.guarded("identity", [&] {
    auto x = rand(4, 4, o.seed + 13);
    s.expect("identity map is bitwise identity", kernels::apply_feature_map(x, {FeatureMap::Identity}, 4) == x);
  });
  return s.take();
}

inline std::vector<CheckResult> check_attention(const CheckOptions& o) {
  Suite s("attention");
  const auto zoo = kernels::kernel_zoo();
  s.guarded("hydra-vs-per-head", [&] {
    double worst = 0;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      const std::size_t t = 1 + i % 8, d = 1 + (i * 3) % 8;
      auto q = rand(t, d, o.seed + 10 * i), k = rand(t, d, o.seed + 10 * i + 1), v = rand(t, d, o.seed + 10 * i + 2);
      for (const auto& [n, pair] : zoo) {
        worst = std::max(worst, max_abs_diff(o.hydra(q, k, v, pair), reference::hydra_per_head(q, k, v, pair)));
      }
    }
    s.bound("hydra == D single-feature heads (all kernels)", worst, 1e-12);
  });
  s.guarded("mla-hd-vs-hydra", [&] {
    double worst = 0;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      auto q = rand(5, 6, o.seed + 7 * i), k = rand(5, 6, o.seed + 7 * i + 1), v = rand(5, 6, o.seed + 7 * i + 2);
      const auto p = KernelPair::symmetric(FeatureMap::CosineL2);
      worst = std::max(worst, max_abs_diff(attention::mla(q, k, v, 6, p), o.hydra(q, k, v, p)));
    }
    s.bound("mla(H=D) == hydra", worst, 1e-12);
  });
  s.guarded("associativity", [&] {
    double worst = 0;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      auto q = rand(8, 8, o.seed + 5 * i), k = rand(8, 8, o.seed + 5 * i + 1), v = rand(8, 8, o.seed + 5 * i + 2);
      auto left = matmul(matmul(q, transpose(k)), v);
      auto right = attention::mla(q, k, v, 1, KernelPair::symmetric(FeatureMap::Identity));
      worst = std::max(worst, max_rel_error(left, right));
    }
    s.bound("identity-kernel association orders agree", worst, 1e-9);
  });
  s.guarded("linearity", [&] {
    auto q = rand(6, 5, o.seed + 1), k = rand(6, 5, o.seed + 2), v1 = rand(6, 5, o.seed + 3), v2 = rand(6, 5, o.seed + 4);
    const auto p = KernelPair::symmetric(FeatureMap::CosineL2);
    auto lhs = o.hydra(q, k, add(scale(v1, 2.5), scale(v2, -1.5)), p);
    auto rhs = add(scale(o.hydra(q, k, v1, p), 2.5), scale(o.hydra(q, k, v2, p), -1.5));
    s.bound("hydra is linear in V", max_abs_diff(lhs, rhs), 1e-10);
  });
  s.guarded("permutation", [&] {
    auto q = rand(7, 4, o.seed + 5), k = rand(7, 4, o.seed + 6), v = rand(7, 4, o.seed + 7);
    std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
    const auto p = KernelPair::symmetric(FeatureMap::CosineL2);
    auto a = permute_rows<double>(o.hydra(q, k, v, p), perm);
    auto b = o.hydra(permute_rows<double>(q, perm), permute_rows<double>(k, perm), permute_rows<double>(v, perm), p);
    s.bound("token permutation equivariance", max_abs_diff(a, b), 1e-12);
  });
  s.guarded("aft", [&] {
    bool same = true;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      auto q = rand(3 + i % 5, 4, o.seed + 3 * i), k = rand(3 + i % 5, 4, o.seed + 3 * i + 1), v = rand(3 + i % 5, 4, o.seed + 3 * i + 2);
      same = same && attention::aft_simple(q, k, v) == o.hydra(q, k, v, {{FeatureMap::Sigmoid}, {FeatureMap::SoftmaxTokens}});
    }
    s.expect("aft_simple == hydra(sigmoid, softmax) bitwise", same);
  });
  s.guarded("polynl", [&] {
    double worst = 0;
    for (std::size_t i = 0; i < o.seeds; ++i) {
      const std::size_t t = 2 + i % 7, d = 1 + i % 8;
      auto x = rand(t, d, o.seed + 4 * i), w1 = rand(d, d, o.seed + 4 * i + 1), w2 = rand(d, d, o.seed + 4 * i + 2),
           w3 = rand(d, d, o.seed + 4 * i + 3);
      auto via_hydra = matmul(o.hydra(x, matmul(x, w1), matmul(x, w2), KernelPair::symmetric(FeatureMap::MeanSqrtT)), w3);
      worst = std::max(worst, max_abs_diff(attention::polynl(x, w1, w2, w3), via_hydra));
    }
    s.bound("polynl == hydra(mean) W3", worst, 1e-12);
  });
  s.guarded("msa", [&] {
    auto q = rand(6, 6, o.seed + 8), k = rand(6, 6, o.seed + 9), v = rand(6, 6, o.seed + 10);
    double worst = 0;
    for (std::size_t h : {1, 2, 3, 6}) {
      for (const auto& m : attention::msa_attention_matrices(q, k, h))
        for (std::size_t i = 0; i < m.rows(); ++i) {
          double total = 0;
          for (double x : m.row(i)) total += x;
          worst = std::max(worst, std::abs(total - 1.0));
        }
      s.bound("msa H=" + std::to_string(h) + " equals per-head loop", max_abs_diff(attention::msa(q, k, v, h), reference::msa_per_head(q, k, v, h)), 1e-12);
    }
    s.bound("msa attention rows sum to 1", worst, 1e-12);
  });
  s.guarded("mac-counts", [&] {
    bool exact = true;
    for (std::size_t t : {3, 8, 17})
      for (std::size_t d : {4, 8, 12})
        for (std::size_t h : {1, 2, 4}) {
          auto q = rand(t, d, 1), k = rand(t, d, 2), v = rand(t, d, 3);
          attention::OpStats a, b, c;
          attention::msa(q, k, v, h, &a);
          attention::mla(q, k, v, h, KernelPair::symmetric(FeatureMap::CosineL2), &b);
          attention::hydra(q, k, v, KernelPair::symmetric(FeatureMap::CosineL2), &c);
          exact = exact && a.macs == 2 * t * t * d && b.macs == 2 * t * d * (d / h) && c.macs == 2 * t * d;
        }
    s.expect("instrumented MACs: msa 2T^2D, mla 2TD^2/H, hydra 2TD", exact);
  });
  return s.take();
}

inline std::vector<CheckResult> check_flops(const CheckOptions&) {
  Suite s("flops");
  struct Row {
    std::uint64_t size;
    double base, base_attn, hydra, local;
  };
  const Row table[] = {{224, 17.6, 4.10, 16.8, 17.6},
                       {384, 55.1, 11.13, 49.0, 51.1},
                       {448, 78.0, 14.56, 66.7, 69.5},
                       {1024, 657.3, 47.06, 348.1, 362.8},
                       {1280, 1298.9, 58.14, 543.8, 566.9}};
  using flops::AttentionKind;
  double worst_rel = 0, worst_pp = 0;
  for (const auto& r : table) {
    auto b = flops::count_vit_flops(r.size, AttentionKind::baseline, 0);
    auto h = flops::count_vit_flops(r.size, AttentionKind::hydra, 12);
    auto l = flops::count_vit_flops(r.size, AttentionKind::local_window, 12);
    worst_rel = std::max({worst_rel, std::abs(flops::gmacs(b.total()) / r.base - 1),
                          std::abs(flops::gmacs(h.total()) / r.hydra - 1), std::abs(flops::gmacs(l.total()) / r.local - 1)});
    worst_pp = std::max({worst_pp, std::abs(flops::attention_fraction(b) - r.base_attn),
                         std::abs(flops::attention_fraction(h) - 0.02), std::abs(flops::attention_fraction(l) - 4.10)});
  }
  s.bound("image-size sweep GMACs relative error", worst_rel, 0.015);
  s.bound("image-size sweep attention fraction (points)", worst_pp, 0.15);
  const auto a224 = flops::count_vit_flops(224, AttentionKind::baseline, 0).attention_matrices;
  const auto a448 = flops::count_vit_flops(448, AttentionKind::baseline, 0).attention_matrices;
  const double t224 = 196, t448 = 784;  // class token ignored
  s.bound("doubling image size ~16x attention", std::abs((t448 * t448) / (t224 * t224) / 16.0 - 1), 0.05);
  s.bound("doubling image size ~16x attention (with class token)", std::abs(static_cast<double>(a448) / a224 / 16.0 - 1), 0.05);
  const double hyd_ratio = static_cast<double>(flops::count_vit_flops(448, AttentionKind::hydra, 12).attention_matrices) /
                           static_cast<double>(flops::count_vit_flops(224, AttentionKind::hydra, 12).attention_matrices);
  s.expect("hydra attention MACs scale linearly in T", hyd_ratio >= 3.9 && hyd_ratio <= 4.1, "ratio " + fmt(hyd_ratio));
  bool mono = true;
  for (std::uint64_t n = 1; n <= 12; ++n)
    mono = mono && flops::count_vit_flops(224, AttentionKind::hydra, n).total() <
                       flops::count_vit_flops(224, AttentionKind::hydra, n - 1).total();
  s.expect("total MACs strictly decrease with replaced layers", mono);
  return s.take();
}

inline std::vector<CheckResult> check_toymodel(const CheckOptions& o) {
  Suite s("toymodel");
  s.guarded("schedules", [&] {
    using attention::Variant;
    auto hydra_at = [](const std::vector<Variant>& layers) {
      std::vector<std::size_t> at;
      for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i] == Variant::Hydra) at.push_back(i + 1);
      return at;
    };
    s.expect("back 2 of 12 -> {11,12}", hydra_at(toy::replacement_schedule(toy::Strategy::back, 2, 12)) == std::vector<std::size_t>{11, 12});
    s.expect("front 0 of 12 -> none", hydra_at(toy::replacement_schedule(toy::Strategy::front, 0, 12)).empty());
    s.expect("interleave 3 of 12 -> {8,10,12}", hydra_at(toy::replacement_schedule(toy::Strategy::interleave, 3, 12)) == std::vector<std::size_t>{8, 10, 12});
  });
  toy::ModelConfig tiny;
  tiny.depth = 2;
  tiny.dim = 8;
  tiny.heads = 2;
  tiny.patch = 4;
  tiny.image_size = 8;
  tiny.seed = o.seed;
  tiny.train_size = 8;
  tiny.batch_size = 4;
  s.guarded("baseline-identity", [&] {
    auto data = toy::make_texture_dataset(4, tiny.image_size, 2, o.seed + 1);
    auto a = toy::forward(toy::init_model(toy::baseline(tiny)), data.images);
    auto b = toy::forward(toy::init_model(toy::with_schedule(tiny, toy::Strategy::back, 0)), data.images);
    s.expect("replacing 0 layers is bit-identical to the baseline", a == b);
  });
  s.guarded("gradient-flow", [&] {
    auto cfg = toy::with_schedule(tiny, toy::Strategy::back, 1);
    auto model = toy::init_model(cfg);
    auto data = toy::make_texture_dataset(2, tiny.image_size, 2, o.seed + 2);
    std::vector<std::size_t> idx = {0, 1};
    ad::ScalarFn f = [&](ad::Tape& t, std::span<const ad::Var> p) { return toy::batch_loss(t, cfg, p, data, idx); };
    // Perturb a subset: the patch embedding, one attention block's Q weights and the head.
    const std::vector<std::size_t> probe = {toy::param::patch_w, toy::param::block(1, toy::param::wq),
                                            toy::param::tail(cfg.depth, toy::param::head_w)};
    auto g = ad::grad(f, model.params);
    double worst = 0;
    for (std::size_t pi : probe) {
      auto only = [&](std::span<const Tensor> x) {
        std::vector<Tensor> all = model.params;
        all[pi] = x[0];
        return ad::evaluate(f, all);
      };
      std::vector<Tensor> in{model.params[pi]};
      auto fd = ad::finite_diff(only, in, 1e-5);
      // Relative error only over coordinates with a gradient above noise level.
      for (std::size_t j = 0; j < fd[0].size(); ++j) {
        const double a = g[pi][j], b = fd[0][j];
        if (std::max(std::abs(a), std::abs(b)) < 1e-7) continue;
        worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}));
      }
    }
    s.bound("end-to-end grad vs finite differences", worst, 1e-3);
  });
  return s.take();
}

inline std::vector<CheckResult> check_bench(const CheckOptions&) {
  Suite s("bench");
  using attention::Variant;
  using bench::SweepAxis;
  const std::vector<std::size_t> ts = {16, 32, 64, 128}, ds = {8, 16, 32, 64}, hs = {1, 2, 4, 8, 16, 32, 64};
  s.guarded("mac-slopes", [&] {
    s.bound("hydra MAC slope in T is 1", std::abs(bench::mac_slope(Variant::Hydra, SweepAxis::tokens, ts, 0, 32, 32) - 1), 1e-9);
    s.bound("hydra MAC slope in D is 1", std::abs(bench::mac_slope(Variant::Hydra, SweepAxis::dim, ds, 64, 0, 0) - 1), 1e-9);
    s.bound("mla MAC slope in H is -1", std::abs(bench::mac_slope(Variant::MLA, SweepAxis::heads, hs, 32, 64, 0) + 1), 1e-9);
    s.bound("msa MAC slope in H is 0", std::abs(bench::mac_slope(Variant::MSA, SweepAxis::heads, hs, 32, 64, 0)), 1e-9);
  });
  s.guarded("storage", [&] {
    bool msa_ok = true, hydra_ok = true;
    for (std::size_t t : {16, 64})
      for (std::size_t h : {1, 4}) msa_ok = msa_ok && bench::measure(Variant::MSA, t, 32, h).peak_intermediate == h * t * t;
    for (std::size_t t : {16, 64})
      for (std::size_t d : {8, 32}) hydra_ok = hydra_ok && bench::measure(Variant::Hydra, t, d, d).peak_intermediate == t * d;
    s.expect("msa peak scratch is H*T^2 values", msa_ok);
    s.expect("hydra peak scratch is T*D values", hydra_ok);
  });
  return s.take();
}

inline std::vector<CheckResult> check_viz(const CheckOptions& o) {
  Suite s("viz");
  s.guarded("decomposition", [&] {
    auto q = rand(5, 4, o.seed + 13), k = rand(5, 4, o.seed + 14), v = rand(5, 4, o.seed + 15), g = rand(1, 4, o.seed + 16);
    const auto p = KernelPair::symmetric(FeatureMap::CosineL2);
    auto fq = kernels::apply_feature_map(q, p.query, 5), fk = kernels::apply_feature_map(k, p.key, 5);
    auto scores = viz::token_contributions(fq.row(0), fk, v, g.data());
    auto out = attention::hydra(q, k, v, p);
    double projected = 0;
    for (std::size_t c = 0; c < 4; ++c) projected += out(0, c) * g[c];
    s.bound("sum of contributions == projected class-token output",
            std::abs(std::accumulate(scores.begin(), scores.end(), 0.0) - projected), 1e-10);
    auto g2 = scale(g, 4.2);
    auto scores2 = viz::token_contributions(fq.row(0), fk, v, g2.data());
    std::vector<double> tail1(scores.begin() + 1, scores.end()), tail2(scores2.begin() + 1, scores2.end());
    s.expect("heatmap invariant to positive scaling of g",
             viz::render_heatmap(tail1, 2, 2).pixels == viz::render_heatmap(tail2, 2, 2).pixels);
  });
  return s.take();
}

}  // namespace detail

// Runs the named module's checks, or all of them for "all".
inline std::vector<CheckResult> run_checks(std::string_view module, const CheckOptions& options = {}) {
  using Fn = std::vector<CheckResult> (*)(const CheckOptions&);
  const std::pair<std::string_view, Fn> table[] = {
      {"tensor", detail::check_tensor}, {"autodiff", detail::check_autodiff}, {"kernels", detail::check_kernels},
      {"attention", detail::check_attention}, {"flops", detail::check_flops}, {"toymodel", detail::check_toymodel},
      {"bench", detail::check_bench}, {"viz", detail::check_viz}};
  std::vector<CheckResult> all;
  bool known = module == "all";
  for (const auto& [name, fn] : table) {
    if (module != "all" && module != name) continue;
    known = true;
    auto part = fn(options);
    all.insert(all.end(), part.begin(), part.end());
  }
  if (!known) throw ConfigError("check: unknown module " + std::string(module));
  return all;
}

}  // namespace hydra::checks
