#include <gtest/gtest.h>

#include <cmath>

#include "pneunet/error.h"
#include "pneunet/explain.h"
#include "pneunet/model.h"

using namespace pneunet;

TEST(GradCam, SingleChannelHandExample) {
  const Tensor a(Shape{1, 2, 2}, {2, 0, 0, 0});
  const Tensor g = Tensor::full(Shape{1, 2, 2}, 1.0f);
  const Heatmap h = cam_from_gradients(a, g, 2, 2);
  EXPECT_EQ(h.grid, (std::vector<float>{1, 0, 0, 0}));
  EXPECT_EQ(h.upsampled, h.grid);
  EXPECT_EQ(h.grid_csv(), "1.000000,0.000000\n0.000000,0.000000\n");
}

TEST(GradCam, WeightsAreMeanGradients) {
  // Channel 0 weight = mean(1,1,1,1) = 1, channel 1 weight = mean(4,0,0,0) = 1
  // raw = A0 + A1 = [1, 3, 0, 0] -> normalised [1/3, 1, 0, 0]
  const Tensor a(Shape{2, 2, 2}, {1, 1, 0, 0, 0, 2, 0, 0});
  const Tensor g(Shape{2, 2, 2}, {1, 1, 1, 1, 4, 0, 0, 0});
  const Heatmap h = cam_from_gradients(a, g, 2, 2);
  EXPECT_NEAR(h.grid[0], 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(h.grid[1], 1.0, 1e-6);
  EXPECT_EQ(h.grid[2], 0.0f);
}

TEST(GradCam, NegativeEvidenceIsClipped) {
  const Tensor a(Shape{1, 2, 2}, {2, 1, 0, 3});
  const Tensor g = Tensor::full(Shape{1, 2, 2}, -1.0f);
  const Heatmap h = cam_from_gradients(a, g, 4, 4);
  for (float v : h.grid) EXPECT_EQ(v, 0.0f);
  for (float v : h.upsampled) EXPECT_EQ(v, 0.0f);
}

TEST(GradCam, ConstantMapIsAllOnes) {
  const Heatmap h = cam_from_gradients(Tensor::full(Shape{1, 3, 3}, 3.0f),
                                       Tensor::full(Shape{1, 3, 3}, 0.5f), 6, 6);
  for (float v : h.grid) EXPECT_FLOAT_EQ(v, 1.0f);
  for (float v : h.upsampled) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(GradCam, ScaleInvariant) {
  Rng rng(1);
  std::vector<float> av(2 * 4 * 4), gv(2 * 4 * 4);
  for (float& v : av) v = static_cast<float>(rng.uniform());
  for (float& v : gv) v = static_cast<float>(rng.uniform(-0.5, 1));
  std::vector<float> scaled = av;
  for (float& v : scaled) v *= 8.0f;
  const Heatmap h1 = cam_from_gradients(Tensor(Shape{2, 4, 4}, av), Tensor(Shape{2, 4, 4}, gv), 4, 4);
  const Heatmap h2 = cam_from_gradients(Tensor(Shape{2, 4, 4}, scaled), Tensor(Shape{2, 4, 4}, gv), 4, 4);
  for (std::size_t i = 0; i < h1.grid.size(); ++i) EXPECT_NEAR(h1.grid[i], h2.grid[i], 1e-6);
}

TEST(GradCam, ShapeMismatchRejected) {
  EXPECT_THROW(cam_from_gradients(Tensor::zeros(Shape{1, 2, 2}), Tensor::zeros(Shape{1, 2, 3}), 2, 2), ShapeError);
}

TEST(GradCam, ModelCamIsNormalisedAndLeavesModelUntouched) {
  const ModelGraph model = build_model(ModelConfig{}, 4);
  const ModelGraph before = model;
  Rng rng(2);
  std::vector<float> px(3 * 64 * 64);
  for (float& v : px) v = static_cast<float>(rng.uniform());
  const Tensor img(Shape{3, 64, 64}, px);
  const CamResult r = grad_cam(model, img);
  EXPECT_EQ(model, before);
  EXPECT_EQ(r.heatmap.grid_w, 8u);
  EXPECT_EQ(r.heatmap.width, 64u);
  EXPECT_EQ(r.heatmap.upsampled.size(), 64u * 64u);
  float mx = 0;
  for (float v : r.heatmap.grid) {
    EXPECT_GE(v, 0.0f);
    mx = std::max(mx, v);
  }
  EXPECT_TRUE(mx == 0.0f || mx == 1.0f);
  EXPECT_NEAR(r.probability, predict(model, img), 1e-6);
  EXPECT_THROW(grad_cam(model.backbone_only(), img), ConfigError);
}

TEST(Overlay, ColormapEndpoints) {
  EXPECT_EQ(colormap(0.0), (std::array<std::uint8_t, 3>{0, 0, 255}));
  EXPECT_EQ(colormap(0.5), (std::array<std::uint8_t, 3>{0, 255, 0}));
  EXPECT_EQ(colormap(1.0), (std::array<std::uint8_t, 3>{255, 0, 0}));
  EXPECT_EQ(colormap(7.0), colormap(1.0));
}

TEST(Overlay, ZeroHeatmapShiftsEverythingTowardBlue) {
  ImageBuffer img(2, 2, 1);
  img.pixels = {0, 100, 200, 255};
  const ImageBuffer out = render_overlay(img, std::vector<float>(4, 0.0f), 0.4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = img.pixels[i];
    EXPECT_EQ(out.pixels[3 * i], static_cast<int>(std::lround(0.6 * g)));
    EXPECT_EQ(out.pixels[3 * i + 1], static_cast<int>(std::lround(0.6 * g)));
    EXPECT_EQ(out.pixels[3 * i + 2], static_cast<int>(std::lround(0.6 * g + 0.4 * 255)));
  }
}

TEST(Overlay, BlendZeroIsGrayInRgb) {
  ImageBuffer img(2, 1, 1);
  img.pixels = {10, 200};
  const ImageBuffer out = render_overlay(img, {1.0f, 0.0f}, 0.0);
  EXPECT_EQ(out.channels, 3u);
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{10, 10, 10, 200, 200, 200}));
  const ImageBuffer full = render_overlay(img, {1.0f, 0.0f}, 1.0);
  EXPECT_EQ(full.pixels, (std::vector<std::uint8_t>{255, 0, 0, 0, 0, 255}));
  EXPECT_THROW(render_overlay(img, {1.0f}, 0.4), ShapeError);
  EXPECT_THROW(render_overlay(img, {1.0f, 0.0f}, 1.5), ConfigError);
}
