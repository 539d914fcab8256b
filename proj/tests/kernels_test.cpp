#include <gtest/gtest.h>

#include <cmath>

#include "hydra/kernels.hpp"

using namespace hydra;
using kernels::FeatureMap;
using kernels::FeatureMapSpec;
using kernels::KernelPair;

TEST(FeatureMap, CosineUnitRow) {
  const auto y = kernels::apply_feature_map(Tensor::matrix({{3, 4}}), {FeatureMap::CosineL2}, 1);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);
}

TEST(FeatureMap, MeanDividesBySqrtT) {
  EXPECT_EQ(kernels::apply_feature_map(Tensor::matrix({{2, 2}}), {FeatureMap::MeanSqrtT}, 4), Tensor::matrix({{1, 1}}));
}

TEST(FeatureMap, SoftmaxAlongTokens) {
  const auto y = kernels::apply_feature_map(Tensor::matrix({{0}, {0}, {0}}), {FeatureMap::SoftmaxTokens}, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y(i, 0), 1.0 / 3.0, 1e-15);
}

TEST(FeatureMap, CosineZeroRowStaysZero) {
  const auto y = kernels::apply_feature_map(Tensor::matrix({{0, 0, 0}, {1, 0, 0}}), {FeatureMap::CosineL2}, 2);
  EXPECT_EQ(y, Tensor::matrix({{0, 0, 0}, {1, 0, 0}}));
  EXPECT_TRUE(kernels::apply_feature_map(Tensor::matrix({{0, 0}}), {FeatureMap::L1Norm}, 1).all_finite());
}

TEST(FeatureMap, CosineNormIsOneOrZero) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_uniform({8, 6}, seed);
    for (std::size_t c = 0; c < 6; ++c) x(seed % 8, c) = 0;
    const auto n = norm_rows(kernels::apply_feature_map(x, {FeatureMap::CosineL2}, 8), 2);
    for (double v : n.data()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0) <= 1e-9) << v;
  }
}

TEST(FeatureMap, CosineScaleInvariant) {
  const auto x = random_uniform({5, 5}, 3);
  for (double c : {1e-3, 0.5, 7.0, 1e4})
    EXPECT_LE(max_abs_diff(kernels::apply_feature_map(scale(x, c), {FeatureMap::CosineL2}, 5),
                           kernels::apply_feature_map(x, {FeatureMap::CosineL2}, 5)),
              1e-12);
}

TEST(FeatureMap, SoftmaxColumnsSumToOne) {
  const auto y = kernels::apply_feature_map(scale(random_uniform({9, 4}, 2), 100.0), {FeatureMap::SoftmaxTokens}, 9);
  const auto sums = reduce_sum(y, 0);
  for (double v : sums.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(FeatureMap, IdentityBitwise) {
  const auto x = random_uniform({6, 3}, 4);
  EXPECT_EQ(kernels::apply_feature_map(x, {FeatureMap::Identity}, 6), x);
}

TEST(FeatureMap, ElementwiseMaps) {
  const auto x = Tensor::matrix({{0.0, 1.0, -2.0}});
  const auto t = kernels::apply_feature_map(x, {FeatureMap::Tanh}, 1);
  const auto s = kernels::apply_feature_map(x, {FeatureMap::Sigmoid}, 1);
  const auto l = kernels::apply_feature_map(x, {FeatureMap::L1Norm}, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(t(0, c), std::tanh(x(0, c)));
    EXPECT_DOUBLE_EQ(s(0, c), 1.0 / (1.0 + std::exp(-x(0, c))));
    EXPECT_DOUBLE_EQ(l(0, c), x(0, c) / 3.0);
  }
}

TEST(FeatureMap, RejectsVectors) {
  EXPECT_THROW(kernels::apply_feature_map(Tensor::vector({1, 2}), {FeatureMap::CosineL2}, 1), DimensionError);
}

TEST(KernelNames, RoundTrip) {
  for (const char* n : {"cossim", "mean", "tanh", "sigmoid", "softmax", "l1", "identity", "cossim+ln", "tanh+ln"}) {
    const auto spec = kernels::parse_feature_map(n);
    ASSERT_TRUE(spec) << n;
    EXPECT_EQ(kernels::name(*spec), n);
  }
  EXPECT_FALSE(kernels::parse_feature_map("relu"));
  EXPECT_FALSE(kernels::parse_feature_map("+ln"));
}

TEST(KernelNames, Pairs) {
  const auto sym = kernels::parse_kernel_pair("cossim+ln");
  ASSERT_TRUE(sym);
  EXPECT_EQ(*sym, KernelPair::symmetric(FeatureMap::CosineL2, true));
  EXPECT_TRUE(sym->post_layer_norm());
  EXPECT_FALSE(sym->without_layer_norm().post_layer_norm());
  const auto asym = kernels::parse_kernel_pair("tanh,softmax");
  ASSERT_TRUE(asym);
  EXPECT_EQ(asym->query.map, FeatureMap::Tanh);
  EXPECT_EQ(asym->key.map, FeatureMap::SoftmaxTokens);
  EXPECT_EQ(kernels::name(*asym), "tanh,softmax");
  EXPECT_FALSE(kernels::parse_kernel_pair("tanh,bogus"));
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  const auto y = kernels::layer_norm(random_uniform({5, 16}, 6));
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (double v : y.row(i)) mean += v;
    mean /= 16;
    for (double v : y.row(i)) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / 16, 1.0, 1e-3);
  }
  EXPECT_TRUE(kernels::layer_norm(zeros({2, 4})).all_finite());
}
