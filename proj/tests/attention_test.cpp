#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hydra/attention.hpp"
#include "hydra/reference.hpp"

using namespace hydra;
using attention::Variant;
using kernels::FeatureMap;
using kernels::KernelPair;

namespace {
const KernelPair kCos = KernelPair::symmetric(FeatureMap::CosineL2);
Tensor rnd(std::size_t t, std::size_t d, std::uint64_t seed) { return random_uniform({t, d}, seed); }
}  // namespace

TEST(Msa, SingleTokenReturnsV) {
  const auto v = rnd(1, 4, 3);
  EXPECT_EQ(attention::msa(rnd(1, 4, 1), rnd(1, 4, 2), v, 2), v);
}

TEST(Msa, ZeroQueryAveragesV) {
  const auto v = rnd(5, 6, 4);
  const auto out = attention::msa(zeros({5, 6}), rnd(5, 6, 2), v, 3);
  const auto mean = scale(reduce_sum(v, 0), 1.0 / 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out(i, c), mean[c], 1e-15);
}

TEST(Msa, MatchesPerHeadLoop) {
  const auto q = rnd(4, 6, 3), k = rnd(4, 6, 4), v = rnd(4, 6, 5);
  for (std::size_t h : {1, 2, 3}) EXPECT_LE(max_abs_diff(attention::msa(q, k, v, h), reference::msa_per_head(q, k, v, h)), 1e-12);
}

TEST(Msa, ScalesBySqrtFullDim) {
  // With H = 2 each head has width 2; logits are still divided by sqrt(4).
  const auto q = Tensor::matrix({{1, 0, 0, 0}, {0, 0, 0, 0}});
  const auto k = Tensor::matrix({{2, 0, 0, 0}, {0, 0, 0, 0}});
  const auto v = Tensor::matrix({{1, 0, 0, 0}, {0, 0, 0, 0}});
  const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(attention::msa(q, k, v, 2)(0, 0), p, 1e-15);
}

TEST(Msa, HeadsMustDivideDim) {
  EXPECT_THROW(attention::msa(rnd(3, 6, 1), rnd(3, 6, 2), rnd(3, 6, 3), 4), SpecError);
  EXPECT_THROW(attention::mla(rnd(3, 6, 1), rnd(3, 6, 2), rnd(3, 6, 3), 4, kCos), SpecError);
}

TEST(Msa, AttentionRowsSumToOne) {
  for (const auto& m : attention::msa_attention_matrices(rnd(7, 8, 1), rnd(7, 8, 2), 4))
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(std::accumulate(m.row(i).begin(), m.row(i).end(), 0.0), 1.0, 1e-12);
}

TEST(Mla, IdentityKernelAssociativity) {
  const auto q = rnd(6, 5, 1), k = rnd(6, 5, 2), v = rnd(6, 5, 3);
  const auto id = KernelPair::symmetric(FeatureMap::Identity);
  EXPECT_LE(max_rel_error(attention::mla(q, k, v, 1, id), matmul(matmul(q, transpose(k)), v)), 1e-9);
}

TEST(Mla, ZeroValues) { EXPECT_EQ(attention::mla(rnd(3, 4, 1), rnd(3, 4, 2), zeros({3, 4}), 2, kCos), zeros({3, 4})); }

TEST(Mla, HeadsEqualDimIsHydra) {
  const auto q = rnd(3, 4, 5), k = rnd(3, 4, 6), v = rnd(3, 4, 7);
  EXPECT_LE(max_abs_diff(attention::mla(q, k, v, 4, kCos), attention::hydra(q, k, v, kCos)), 1e-12);
}

TEST(Mla, MatchesLeftToRightPerHead) {
  for (const auto& [name, pair] : kernels::kernel_zoo()) {
    const auto q = rnd(7, 6, 1), k = rnd(7, 6, 2), v = rnd(7, 6, 3);
    for (std::size_t h : {1, 2, 3, 6})
      EXPECT_LE(max_abs_diff(attention::mla(q, k, v, h, pair), reference::linear_attention_per_head(q, k, v, h, pair)), 1e-12)
          << name << " H=" << h;
  }
}

TEST(Mla, FeatureMapSeesWholeRow) {
  // Normalising each head's slice separately would give a different answer.
  const auto q = rnd(4, 4, 1), k = rnd(4, 4, 2), v = rnd(4, 4, 3);
  const auto out = attention::mla(q, k, v, 2, kCos);
  const auto fq = kernels::apply_feature_map(q, kCos.query, 4), fk = kernels::apply_feature_map(k, kCos.key, 4);
  const auto expect = attention::mla(fq, fk, v, 2, KernelPair::symmetric(FeatureMap::Identity));
  EXPECT_LE(max_abs_diff(out, expect), 1e-12);
}

TEST(Hydra, HandEvaluatedOnes) {
  const auto ones = full({2, 2}, 1.0);
  const auto out = attention::hydra(ones, ones, ones, kCos);
  for (double x : out.data()) EXPECT_NEAR(x, 1.0, 1e-15);
}

TEST(Hydra, ZeroValues) { EXPECT_EQ(attention::hydra(rnd(3, 4, 1), rnd(3, 4, 2), zeros({3, 4}), kCos), zeros({3, 4})); }

TEST(Hydra, EqualsPerFeatureHeadsForAllKernels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t t = 1 + seed % 8, d = 1 + (seed * 5) % 8;
    const auto q = rnd(t, d, 3 * seed), k = rnd(t, d, 3 * seed + 1), v = rnd(t, d, 3 * seed + 2);
    for (const auto& [name, pair] : kernels::kernel_zoo())
      EXPECT_LE(max_abs_diff(attention::hydra(q, k, v, pair), reference::hydra_per_head(q, k, v, pair)), 1e-12) << name;
  }
}

TEST(Hydra, LinearInValues) {
  const auto q = rnd(6, 5, 1), k = rnd(6, 5, 2), v1 = rnd(6, 5, 3), v2 = rnd(6, 5, 4);
  const auto lhs = attention::hydra(q, k, add(scale(v1, 0.3), scale(v2, -2.0)), kCos);
  const auto rhs = add(scale(attention::hydra(q, k, v1, kCos), 0.3), scale(attention::hydra(q, k, v2, kCos), -2.0));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(Hydra, TokenPermutationEquivariance) {
  const auto q = rnd(6, 4, 1), k = rnd(6, 4, 2), v = rnd(6, 4, 3);
  const std::vector<std::size_t> perm = {5, 3, 0, 1, 4, 2};
  for (const auto& [name, pair] : kernels::kernel_zoo()) {
    const auto a = permute_rows<double>(attention::hydra(q, k, v, pair), perm);
    const auto b = attention::hydra(permute_rows<double>(q, perm), permute_rows<double>(k, perm), permute_rows<double>(v, perm), pair);
    EXPECT_LE(max_abs_diff(a, b), 1e-12) << name;
  }
}

TEST(Hydra, ShapeMismatch) {
  EXPECT_THROW(attention::hydra(rnd(3, 4, 1), rnd(3, 5, 2), rnd(3, 4, 3), kCos), DimensionError);
}

TEST(Hydra, FloatAndDoubleAgree) {
  const auto q = rnd(8, 8, 1), k = rnd(8, 8, 2), v = rnd(8, 8, 3);
  const auto d = attention::hydra(q, k, v, kCos);
  const auto f = attention::hydra(q.cast<float>(), k.cast<float>(), v.cast<float>(), kCos);
  EXPECT_LE(max_abs_diff(d, f.cast<double>()), 1e-5);
}

TEST(HydraBackward, ZeroUpstream) {
  const auto g = attention::hydra_backward(rnd(4, 4, 1), rnd(4, 4, 2), rnd(4, 4, 3), kCos, zeros({4, 4}));
  for (const auto* t : {&g.dq, &g.dk, &g.dv}) EXPECT_EQ(*t, zeros({4, 4}));
}

namespace {
// Gradient of <upstream, hydra(q, k, v)> by central differences.
std::array<Tensor, 3> numeric_hydra_grads(const Tensor& q, const Tensor& k, const Tensor& v, const KernelPair& p,
                                          const Tensor& up) {
  std::array<Tensor, 3> in{q, k, v}, out{zeros(q.shape()), zeros(q.shape()), zeros(q.shape())};
  const double h = 1e-5;
  for (std::size_t which = 0; which < 3; ++which)
    for (std::size_t i = 0; i < q.size(); ++i) {
      auto f = [&](double delta) {
        auto x = in;
        x[which][i] += delta;
        return sum_all(mul(attention::hydra(x[0], x[1], x[2], p), up));
      };
      out[which][i] = (f(h) - f(-h)) / (2 * h);
    }
  return out;
}
}  // namespace

TEST(HydraBackward, IdentityKernelsMatchFiniteDifferences) {
  const auto q = rnd(4, 3, 1), k = rnd(4, 3, 2), v = rnd(4, 3, 3), up = rnd(4, 3, 4);
  const auto id = KernelPair::symmetric(FeatureMap::Identity);
  const auto g = attention::hydra_backward(q, k, v, id, up);
  const auto n = numeric_hydra_grads(q, k, v, id, up);
  EXPECT_LT(max_rel_error(g.dq, n[0]), 1e-6);
  EXPECT_LT(max_rel_error(g.dk, n[1]), 1e-6);
  EXPECT_LT(max_rel_error(g.dv, n[2]), 1e-6);
}

TEST(HydraBackward, AllKernelsMatchFiniteDifferences) {
  for (const auto& [name, pair] : kernels::kernel_zoo()) {
    const auto q = rnd(4, 4, 9), k = rnd(4, 4, 10), v = rnd(4, 4, 11), up = rnd(4, 4, 12);
    const auto g = attention::hydra_backward(q, k, v, pair, up);
    const auto n = numeric_hydra_grads(q, k, v, pair, up);
    EXPECT_LT(max_rel_error(g.dq, n[0]), 1e-4) << name;
    EXPECT_LT(max_rel_error(g.dk, n[1]), 1e-4) << name;
    EXPECT_LT(max_rel_error(g.dv, n[2]), 1e-4) << name;
  }
}

TEST(Aft, BitwiseEqualToHydraSigmoidSoftmax) {
  const KernelPair aft{{FeatureMap::Sigmoid}, {FeatureMap::SoftmaxTokens}};
  for (std::uint64_t seed = 2; seed < 22; ++seed) {
    const auto q = rnd(3, 4, seed), k = rnd(3, 4, seed + 100), v = rnd(3, 4, seed + 200);
    EXPECT_EQ(attention::aft_simple(q, k, v), attention::hydra(q, k, v, aft));
  }
}

TEST(Aft, SingleToken) {
  const auto q = rnd(1, 4, 1), v = rnd(1, 4, 3);
  const auto out = attention::aft_simple(q, rnd(1, 4, 2), v);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out(0, c), v(0, c) / (1 + std::exp(-q(0, c))));
}

TEST(Aft, ZeroValues) { EXPECT_EQ(attention::aft_simple(rnd(3, 4, 1), rnd(3, 4, 2), zeros({3, 4})), zeros({3, 4})); }

TEST(PolyNL, EqualsMeanKernelHydra) {
  const auto x = rnd(3, 4, 11), w1 = rnd(4, 4, 12), w2 = rnd(4, 4, 13), w3 = rnd(4, 4, 14);
  const auto via = matmul(attention::hydra(x, matmul(x, w1), matmul(x, w2), KernelPair::symmetric(FeatureMap::MeanSqrtT)), w3);
  EXPECT_LE(max_abs_diff(attention::polynl(x, w1, w2, w3), via), 1e-12);
}

TEST(PolyNL, DegenerateInputs) {
  EXPECT_EQ(attention::polynl(rnd(3, 4, 1), zeros({4, 4}), zeros({4, 4}), identity(4)), zeros({3, 4}));
  EXPECT_EQ(attention::polynl(zeros({3, 4}), rnd(4, 4, 1), rnd(4, 4, 2), rnd(4, 4, 3)), zeros({3, 4}));
  EXPECT_THROW(attention::polynl(rnd(3, 4, 1), rnd(4, 3, 1), rnd(4, 4, 2), rnd(4, 4, 3)), DimensionError);
}

TEST(Counting, InstrumentedMacs) {
  for (std::size_t t : {2, 9}) {
    for (std::size_t d : {4, 12}) {
      const auto q = rnd(t, d, 1), k = rnd(t, d, 2), v = rnd(t, d, 3);
      for (std::size_t h : {1, 2, 4}) {
        attention::OpStats a, b;
        attention::msa(q, k, v, h, &a);
        attention::mla(q, k, v, h, kCos, &b);
        EXPECT_EQ(a.macs, 2 * t * t * d);
        EXPECT_EQ(b.macs, 2 * t * d * (d / h));
        EXPECT_EQ(a.peak_intermediate, h * t * t);
        EXPECT_EQ(a.macs, attention::analytic_macs(Variant::MSA, t, d, h));
      }
      attention::OpStats c;
      attention::hydra(q, k, v, kCos, &c);
      EXPECT_EQ(c.macs, 2 * t * d);
      EXPECT_EQ(c.feature_map_ops, 4 * t * d);
      EXPECT_EQ(c.peak_intermediate, t * d);
    }
  }
}

TEST(LayerSpec, Validation) {
  attention::AttentionLayerSpec s{Variant::Hydra, 8, kCos, 5, 8};
  EXPECT_NO_THROW(s.validate());
  s.heads = 4;
  EXPECT_THROW(s.validate(), SpecError);
  s.variant = Variant::MSA;
  EXPECT_NO_THROW(s.validate());
  s.heads = 3;
  EXPECT_THROW(s.validate(), SpecError);
}

TEST(LayerSpec, AttendDispatch) {
  const auto q = rnd(5, 4, 1), k = rnd(5, 4, 2), v = rnd(5, 4, 3);
  EXPECT_EQ(attention::attend({Variant::Hydra, 4, kCos, 5, 4}, q, k, v), attention::hydra(q, k, v, kCos));
  EXPECT_EQ(attention::attend({Variant::MSA, 2, kCos, 5, 4}, q, k, v), attention::msa(q, k, v, 2));
  EXPECT_THROW(attention::attend({Variant::PolyNL, 4, kCos, 5, 4}, q, k, v), SpecError);
}

TEST(Variants, Names) {
  for (auto v : {Variant::MSA, Variant::MLA, Variant::Hydra, Variant::AFTSimple, Variant::PolyNL})
    EXPECT_EQ(attention::parse_variant(attention::name(v)), v);
  EXPECT_FALSE(attention::parse_variant("performer"));
}
