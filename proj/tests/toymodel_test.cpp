#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hydra/toymodel.hpp"

using namespace hydra;
using attention::Variant;
using toy::Strategy;

namespace {

std::vector<std::size_t> hydra_layers(const std::vector<Variant>& layers) {
  std::vector<std::size_t> at;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i] == Variant::Hydra) at.push_back(i + 1);
  return at;
}

// Small enough to train in well under a second.
toy::ModelConfig tiny() {
  toy::ModelConfig c;
  c.depth = 2;
  c.dim = 8;
  c.heads = 2;
  c.patch = 4;
  c.image_size = 8;
  c.train_size = 16;
  c.val_size = 8;
  c.batch_size = 4;
  c.steps = 12;
  c.learning_rate = 0.05;
  return c;
}

}  // namespace

TEST(Schedule, Back) {
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::back, 2, 12)), (std::vector<std::size_t>{11, 12}));
}

TEST(Schedule, FrontZeroIsBaseline) {
  EXPECT_EQ(toy::replacement_schedule(Strategy::front, 0, 12), std::vector<Variant>(12, Variant::MSA));
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::front, 3, 12)), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Schedule, Interleave) {
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::interleave, 3, 12)), (std::vector<std::size_t>{8, 10, 12}));
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::interleave, 6, 12)), (std::vector<std::size_t>{2, 4, 6, 8, 10, 12}));
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::interleave, 8, 12)),
            (std::vector<std::size_t>{2, 4, 6, 8, 9, 10, 11, 12}));
  EXPECT_EQ(hydra_layers(toy::replacement_schedule(Strategy::interleave, 2, 3)), (std::vector<std::size_t>{1, 3}));
}

TEST(Schedule, CountsAndErrors) {
  for (auto s : {Strategy::front, Strategy::back, Strategy::interleave})
    for (std::size_t n = 0; n <= 12; ++n) EXPECT_EQ(hydra_layers(toy::replacement_schedule(s, n, 12)).size(), n);
  EXPECT_THROW(toy::replacement_schedule(Strategy::back, 13, 12), SpecError);
  EXPECT_EQ(toy::parse_strategy("interleave"), Strategy::interleave);
  EXPECT_FALSE(toy::parse_strategy("middle"));
}

TEST(Config, Validation) {
  auto c = toy::baseline(tiny());
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.tokens(), 5u);
  auto bad = c;
  bad.image_size = 10;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.layer_specs.pop_back();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny();
  bad.heads = 3;
  EXPECT_THROW(toy::baseline(bad).validate(), SpecError);
}

TEST(Dataset, BalancedDeterministicInRange) {
  const auto a = toy::make_texture_dataset(12, 8, 3, 4), b = toy::make_texture_dataset(12, 8, 3, 4);
  ASSERT_EQ(a.size(), 12u);
  std::vector<int> per(3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.images[i], b.images[i]);
    EXPECT_EQ(a.images[i].shape(), (Shape{8, 24}));
    for (double v : a.images[i].data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    ++per[a.labels[i]];
  }
  EXPECT_EQ(per, (std::vector<int>{4, 4, 4}));
  EXPECT_THROW(toy::make_texture_dataset(4, 8, 5, 0), ConfigError);
}

TEST(Dataset, PatchifyLayout) {
  Tensor img({4, 12});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const auto p = toy::patchify(img, 2);
  EXPECT_EQ(p.shape(), (Shape{4, 12}));
  EXPECT_EQ(p(0, 0), img(0, 0));
  EXPECT_EQ(p(0, 6), img(1, 0));
  EXPECT_EQ(p(1, 0), img(0, 6));
  EXPECT_EQ(p(3, 11), img(3, 11));
  EXPECT_THROW(toy::patchify(img, 3), DimensionError);
}

TEST(Dataset, PpmRoundTrip) {
  const auto img = toy::make_texture_dataset(2, 8, 2, 1).images[0];
  const auto back = toy::image_from_ppm(toy::image_to_ppm(img));
  EXPECT_LE(max_abs_diff(img, back), 0.5 / 255.0 + 1e-12);
}

TEST(Model, InitShapes) {
  const auto m = toy::init_model(toy::baseline(tiny()));
  EXPECT_EQ(m.params.size(), toy::param::kGlobal + 2 * toy::param::kBlock + toy::param::kFinal);
  EXPECT_EQ(m.params[toy::param::pos].shape(), (Shape{5, 8}));
  EXPECT_EQ(m.params[toy::param::block(1, toy::param::ln2_g)], Tensor({8}, 1.0));
  for (double v : m.params[toy::param::block(0, toy::param::wq)].data()) EXPECT_LE(std::abs(v), 0.04);
}

TEST(Forward, ZeroHeadGivesUniformLogits) {
  auto m = toy::init_model(toy::with_schedule(tiny(), Strategy::back, 2));
  m.params[toy::param::tail(2, toy::param::head_w)] = zeros({8, 2});
  const auto data = toy::make_texture_dataset(4, 8, 2, 3);
  const auto logits = toy::forward(m, data.images);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(logits(i, 0), logits(i, 1));
}

TEST(Forward, VariantChangesLogits) {
  const auto data = toy::make_texture_dataset(2, 8, 2, 3);
  auto msa = toy::init_model(toy::baseline(tiny()));
  auto hyd = msa;
  hyd.config = toy::with_schedule(tiny(), Strategy::back, 1);
  EXPECT_GT(max_abs_diff(toy::forward(msa, data.images), toy::forward(hyd, data.images)), 1e-9);
}

TEST(Forward, BatchPermutation) {
  const auto m = toy::init_model(toy::with_schedule(tiny(), Strategy::interleave, 1));
  const auto data = toy::make_texture_dataset(4, 8, 2, 3);
  const std::vector<Tensor> swapped = {data.images[2], data.images[0], data.images[3], data.images[1]};
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  EXPECT_EQ(toy::forward(m, swapped), permute_rows<double>(toy::forward(m, data.images), perm));
}

TEST(Forward, ZeroReplacementIsBaseline) {
  const auto data = toy::make_texture_dataset(3, 8, 2, 9);
  EXPECT_EQ(toy::forward(toy::init_model(toy::baseline(tiny())), data.images),
            toy::forward(toy::init_model(toy::with_schedule(tiny(), Strategy::front, 0)), data.images));
}

TEST(Forward, WrongImageSize) {
  const auto m = toy::init_model(toy::baseline(tiny()));
  const std::vector<Tensor> imgs = {zeros({16, 48})};
  EXPECT_THROW(toy::forward(m, imgs), DimensionError);
}

TEST(Forward, AllVariantsRun) {
  const auto data = toy::make_texture_dataset(2, 8, 2, 3);
  for (auto v : {Variant::MSA, Variant::MLA, Variant::Hydra, Variant::AFTSimple, Variant::PolyNL}) {
    const auto m = toy::init_model(toy::with_layers(tiny(), {v, Variant::Hydra}));
    EXPECT_TRUE(toy::forward(m, data.images).all_finite()) << attention::name(v);
  }
}

TEST(Gradient, EndToEndMatchesFiniteDifferences) {
  const auto cfg = toy::with_schedule(tiny(), Strategy::back, 1, kernels::KernelPair::symmetric(kernels::FeatureMap::CosineL2, true));
  const auto m = toy::init_model(cfg);
  const auto data = toy::make_texture_dataset(2, 8, 2, 5);
  const std::vector<std::size_t> idx = {0, 1};
  ad::ScalarFn f = [&](ad::Tape& t, std::span<const ad::Var> p) { return toy::batch_loss(t, cfg, p, data, idx); };
  const auto g = ad::grad(f, m.params);
  for (std::size_t pi : {std::size_t{toy::param::pos}, toy::param::block(0, toy::param::wk), toy::param::block(1, toy::param::wv),
                         toy::param::block(1, toy::param::w1), toy::param::tail(2, toy::param::head_b)}) {
    auto only = [&](std::span<const Tensor> x) {
      auto all = m.params;
      all[pi] = x[0];
      return ad::evaluate(f, all);
    };
    const std::vector<Tensor> in{m.params[pi]};
    const auto fd = ad::finite_diff(only, in)[0];
    for (std::size_t j = 0; j < fd.size(); ++j) {
      const double a = g[pi][j], b = fd[j];
      if (std::max(std::abs(a), std::abs(b)) < 1e-7) continue;
      EXPECT_LT(std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}), 1e-3) << m.names[pi] << "[" << j << "]";
    }
  }
}

TEST(Train, Deterministic) {
  const auto cfg = toy::with_schedule(tiny(), Strategy::back, 1);
  const auto a = toy::train(cfg), b = toy::train(cfg);
  EXPECT_TRUE(a.same_outcome(b));
  EXPECT_EQ(a.step_losses.size(), 12u);
  EXPECT_EQ(a.epoch_losses.size(), 3u);
  auto other = cfg;
  other.seed = 1;
  EXPECT_NE(toy::train(other).step_losses, a.step_losses);
}

TEST(Train, ZeroLearningRateKeepsLoss) {
  auto cfg = toy::with_schedule(tiny(), Strategy::back, 2);
  cfg.learning_rate = 0;
  const auto r = toy::train(cfg);
  for (double l : r.epoch_losses) EXPECT_NEAR(l, r.epoch_losses.front(), 1e-12);
}

TEST(Train, DivergenceReportsEpoch) {
  auto cfg = toy::with_schedule(tiny(), Strategy::back, 0);
  cfg.learning_rate = 1e30;
  try {
    toy::train(cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_LE(e.epoch(), 2u);
  }
}

TEST(Train, RejectsUnbalancedData) {
  const auto cfg = toy::baseline(tiny());
  auto data = toy::make_texture_dataset(16, 8, 2, 1);
  data.labels[0] = data.labels[1];
  EXPECT_THROW(toy::train(cfg, data, data), ConfigError);
}

TEST(Train, LossDecreasedHelper) {
  std::vector<double> down(30), flat(30, 1.0);
  for (std::size_t i = 0; i < 30; ++i) down[i] = 1.0 / (1.0 + i);
  EXPECT_TRUE(toy::loss_decreased(down));
  EXPECT_FALSE(toy::loss_decreased(flat));
  EXPECT_FALSE(toy::loss_decreased(std::vector<double>(5, 1.0)));
}

TEST(HeadSweep, MacCounts) {
  toy::ModelConfig base;
  const std::vector<std::size_t> hs = {1, 2, 4, 8, 16, 32, 64};
  const auto rows = toy::head_sweep(base, hs, false);
  ASSERT_EQ(rows.size(), hs.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].mla_macs * 2, rows[i - 1].mla_macs);
    EXPECT_EQ(rows[i].msa_macs, rows[0].msa_macs);
  }
  EXPECT_EQ(rows.back().mla_macs, rows.back().hydra_macs);
  const std::vector<std::size_t> bad = {3};
  EXPECT_THROW(toy::head_sweep(base, bad, false), SpecError);
}

TEST(HeadSweep, TrainsMla) {
  auto base = tiny();
  base.steps = 4;
  const std::vector<std::size_t> hs = {2, 8};
  for (const auto& r : toy::head_sweep(base, hs, true)) {
    EXPECT_TRUE(r.trainable);
    EXPECT_TRUE(std::isfinite(r.final_loss));
  }
}

TEST(Weights, RoundTrip) {
  const auto cfg = toy::with_layers(tiny(), {Variant::MLA, Variant::Hydra}, kernels::KernelPair::symmetric(kernels::FeatureMap::Tanh, true));
  const auto m = toy::init_model(cfg);
  std::stringstream ss;
  toy::save_weights(ss, m);
  const auto back = toy::load_weights(ss);
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.names, m.names);
  EXPECT_EQ(back.config.layer_specs, m.config.layer_specs);
  const auto data = toy::make_texture_dataset(2, 8, 2, 1);
  EXPECT_EQ(toy::forward(back, data.images), toy::forward(m, data.images));
}

TEST(Weights, CorruptFiles) {
  std::stringstream bad_magic("NOTHYDRA....");
  EXPECT_THROW(toy::load_weights(bad_magic), FormatError);
  const auto m = toy::init_model(toy::baseline(tiny()));
  std::stringstream ss;
  toy::save_weights(ss, m);
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 16));
  EXPECT_THROW(toy::load_weights(truncated), FormatError);
}
