#ifndef PNEUNET_EXPLAIN_H_
#define PNEUNET_EXPLAIN_H_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pneunet/image.h"
#include "pneunet/model.h"

namespace pneunet {

struct Heatmap {
  // Normalised map at feature resolution, row-major.
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
  std::vector<float> grid;
  // Bilinear upsampling of grid to the input resolution.
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> upsampled;

  // One row per line, comma separated, 6 decimals.
  std::string grid_csv() const;
};

// Core of Grad-CAM on one feature map A[K,h,w] and its gradient dS/dA:
//   w_k = mean over (y,x) of dS/dA_k ; L = relu(sum_k w_k * A_k)
// then L / max(L), or all zeros when max(L) is 0. Upsampled to out_w x out_h.
Heatmap cam_from_gradients(const Tensor& features, const Tensor& gradients, std::size_t out_w,
                           std::size_t out_h);

// Grad-CAM of the positive-class logit for one [C,H,W] image. The model is
// run in eval mode on a private tape and is not modified.
struct CamResult {
  Heatmap heatmap;
  float probability;
  float logit;
};
CamResult grad_cam(const ModelGraph& model, const Tensor& image);

// 0 -> blue, 0.5 -> green, 1 -> red, linear in between; input clamped to [0,1].
std::array<std::uint8_t, 3> colormap(double h);

// out = (1 - blend) * gray_rgb + blend * colormap(h) per pixel, rounded and
// clamped. Grayscale input is replicated to RGB first.
ImageBuffer render_overlay(const ImageBuffer& image, const std::vector<float>& heatmap,
                           double blend = 0.4);

}  // namespace pneunet

#endif  // PNEUNET_EXPLAIN_H_
