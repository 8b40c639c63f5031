#include "pneunet/explain.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pneunet/error.h"

namespace pneunet {

std::string Heatmap::grid_csv() const {
  std::string out;
  char buf[32];
  for (std::size_t y = 0; y < grid_h; ++y) {
    for (std::size_t x = 0; x < grid_w; ++x) {
      std::snprintf(buf, sizeof buf, "%s%.6f", x ? "," : "", grid[y * grid_w + x]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Heatmap cam_from_gradients(const Tensor& features, const Tensor& gradients, std::size_t out_w,
                           std::size_t out_h) {
  if (features.rank() != 3) throw ShapeError("CAM features must be [K,h,w], got " + features.shape().str());
  if (gradients.shape() != features.shape()) throw ShapeError("CAM gradient shape mismatch");
  if (out_w == 0 || out_h == 0) throw ShapeError("CAM output size must be positive");
  const std::size_t k = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t hw = h * w;
  const auto a = features.data();
  const auto g = gradients.data();

  std::vector<double> raw(hw, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double weight = 0.0;
    for (std::size_t i = 0; i < hw; ++i) weight += g[c * hw + i];
    weight /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) raw[i] += weight * a[c * hw + i];
  }
  double peak = 0.0;
  for (double& v : raw) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }

  Heatmap hm;
  hm.grid_w = w;
  hm.grid_h = h;
  hm.grid.assign(hw, 0.0f);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < hw; ++i) hm.grid[i] = static_cast<float>(raw[i] / peak);
  }
  hm.width = out_w;
  hm.height = out_h;
  hm.upsampled = resize_bilinear(hm.grid, w, h, out_w, out_h);
  for (float& v : hm.upsampled) v = std::clamp(v, 0.0f, 1.0f);
  return hm;
}

CamResult grad_cam(const ModelGraph& model, const Tensor& image) {
  if (!model.has_head()) throw ConfigError("grad_cam needs a classifier head");
  const Shape in = model.input_shape();
  if (image.shape() != in) {
    throw ShapeError("grad_cam expects " + in.str() + ", got " + image.shape().str());
  }
  Tape tape;
  ForwardPass pass = model.forward(tape, image.reshaped(Shape{1, in[0], in[1], in[2]}),
                                   {.watch_features = true});
  const Tensor& f = tape.value(pass.features);
  if (f.rank() != 4) throw ShapeError("feature layer output is not 4-D");
  const float logit = tape.value(pass.logits)[0];
  const float prob = tape.value(pass.probabilities)[0];
  tape.backward(sum(tape, pass.logits));
  const Shape item{f.dim(1), f.dim(2), f.dim(3)};
  const Tensor* g = tape.grad(pass.features);
  const Tensor grad = g ? g->reshaped(item) : Tensor::zeros(item);
  return {cam_from_gradients(f.reshaped(item), grad, in[2], in[1]), prob, logit};
}

std::array<std::uint8_t, 3> colormap(double h) {
  h = std::clamp(h, 0.0, 1.0);
  auto px = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); };
  if (h <= 0.5) {
    const double t = h / 0.5;
    return {0, px(255.0 * t), px(255.0 * (1.0 - t))};
  }
  const double t = (h - 0.5) / 0.5;
  return {px(255.0 * t), px(255.0 * (1.0 - t)), 0};
}

ImageBuffer render_overlay(const ImageBuffer& image, const std::vector<float>& heatmap,
                           double blend) {
  image.validate();
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("blend must be in [0, 1]");
  if (heatmap.size() != image.width * image.height) {
    throw ShapeError("heatmap size does not match the image");
  }
  if (image.channels != 1 && image.channels != 3) throw ShapeError("overlay needs 1 or 3 channels");
  ImageBuffer out(image.width, image.height, 3);
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    const auto color = colormap(heatmap[i]);
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = image.pixels[i * image.channels + (image.channels == 3 ? c : 0)];
      const double v = (1.0 - blend) * base + blend * color[c];
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

}  // namespace pneunet
