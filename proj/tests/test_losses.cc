#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.h"
#include "pneunet/error.h"
#include "pneunet/losses.h"

using namespace pneunet;
using namespace pneunet::testing;

TEST(Losses, FocalHandValue) {
  // y=1, p=0.9, alpha=0.25, gamma=2: 0.25 * 0.1^2 * -ln(0.9)
  const double expect = 0.25 * 0.01 * -std::log(0.9);
  EXPECT_NEAR(focal_loss_value(0.9, 1, {0.25, 2.0}), expect, 1e-8);
  EXPECT_NEAR(expect, 2.6340e-4, 1e-8);
}

TEST(Losses, FocalNegativeUsesComplementAlpha) {
  // y=0, p=0.3: p_t = 0.7, alpha_t = 0.75
  EXPECT_NEAR(focal_loss_value(0.3, 0, {0.25, 2.0}), 0.75 * 0.09 * -std::log(0.7), 1e-12);
}

TEST(Losses, BceHandValue) {
  EXPECT_NEAR(bce_loss_value(0.25, 0), -std::log(0.75), 1e-12);
  EXPECT_NEAR(bce_loss_value(0.25, 1), -std::log(0.25), 1e-12);
}

TEST(Losses, FocalWithoutModulationIsBce) {
  Rng rng(11);
  const FocalLossParams plain{std::nullopt, 0.0};
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform(1e-6, 1.0 - 1e-6);
    const int y = static_cast<int>(rng.below(2));
    EXPECT_NEAR(focal_loss_value(p, y, plain), bce_loss_value(p, y), 1e-12);
  }
}

TEST(Losses, ClampKeepsLossFinite) {
  EXPECT_TRUE(std::isfinite(bce_loss_value(0.0, 1)));
  EXPECT_TRUE(std::isfinite(bce_loss_value(1.0, 0)));
  EXPECT_NEAR(bce_loss_value(0.0, 1), -std::log(kProbEpsilon), 1e-6);
}

TEST(Losses, RejectsBadLabelsAndParams) {
  EXPECT_THROW(bce_loss_value(0.5, 2), ConfigError);
  EXPECT_THROW(focal_loss_value(0.5, -1, {}), ConfigError);
  EXPECT_THROW((FocalLossParams{1.5, 2.0}.validate()), ConfigError);
  EXPECT_THROW((FocalLossParams{0.25, -1.0}.validate()), ConfigError);
  EXPECT_THROW(loss_kind_from_string("hinge"), ConfigError);
  EXPECT_EQ(loss_kind_from_string(to_string(LossKind::kFocal)), LossKind::kFocal);
  EXPECT_EQ(loss_kind_from_string(to_string(LossKind::kBce)), LossKind::kBce);
}

TEST(Losses, FocalDecreasesAsTrueClassProbabilityRises) {
  const FocalLossParams params;
  double prev = INFINITY;
  for (int i = 1; i < 100; ++i) {
    const double p = i / 100.0;
    const double l = focal_loss_value(p, 1, params);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Losses, FocalDownWeightsEasyExamplesMoreThanHard) {
  // Ratio focal/BCE (without alpha) equals (1 - p_t)^gamma.
  const FocalLossParams params{std::nullopt, 2.0};
  for (double p : {0.1, 0.5, 0.95}) {
    EXPECT_NEAR(focal_loss_value(p, 1, params) / bce_loss_value(p, 1), (1 - p) * (1 - p), 1e-12);
  }
}

TEST(Losses, TapeMeanMatchesScalarValues) {
  Tape tape;
  const std::vector<float> p{0.2f, 0.7f, 0.9f, 0.4f};
  const std::vector<int> y{0, 1, 1, 0};
  Var v = tape.constant(Tensor(Shape{4, 1}, p));
  const FocalLossParams params;
  double focal = 0, bce = 0;
  for (int i = 0; i < 4; ++i) {
    focal += focal_loss_value(p[i], y[i], params) / 4;
    bce += bce_loss_value(p[i], y[i]) / 4;
  }
  EXPECT_NEAR(tape.value(focal_loss(tape, v, y, params))[0], focal, 1e-6);
  EXPECT_NEAR(tape.value(bce_loss(tape, v, y))[0], bce, 1e-6);
  EXPECT_THROW(bce_loss(tape, v, {0, 1}), ShapeError);
}

TEST(LossGradients, FocalAndBce) {
  Rng rng(12);
  double worst = 0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(rng.below(2));
    const FocalLossParams params{rng.bernoulli(0.5) ? std::optional<double>(rng.uniform(0.1, 0.9)) : std::nullopt,
                                 rng.uniform(0.0, 3.0)};
    const std::vector<Tensor64> inputs{random_tensor(Shape{n, 1}, rng, 0.05, 0.95)};
    auto focal = [&](auto& t, const std::vector<Var>& v) { return focal_loss(t, v[0], labels, params); };
    auto bce = [&](auto& t, const std::vector<Var>& v) { return bce_loss(t, v[0], labels); };
    const auto a = grad_check(focal, inputs, rng);
    const auto b = grad_check(bce, inputs, rng);
    EXPECT_EQ(a.skipped + b.skipped, 0u);
    worst = std::max({worst, a.max_rel_error, b.max_rel_error});
  }
  EXPECT_LE(worst, kGradTolerance);
}
