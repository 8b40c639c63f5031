#include "pneunet/kernels.h"

namespace pneunet::kernels::reference {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bias.empty() ? T{0} : bias[f];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                    ix >= static_cast<long>(g.in_w)) {
                  continue;
                }
                const T x = input[((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                const T w = weight[((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                acc += x * w;
              }
            }
          }
          output[((b * g.out_channels + f) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T go = grad_output[((b * g.out_channels + f) * oh + oy) * ow + ox];
          if (!grad_bias.empty()) grad_bias[f] += go;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                    ix >= static_cast<long>(g.in_w)) {
                  continue;
                }
                const std::size_t in_idx = ((b * g.in_channels + c) * g.in_h + iy) * g.in_w + ix;
                const std::size_t w_idx = ((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx;
                if (!grad_weight.empty()) grad_weight[w_idx] += go * input[in_idx];
                if (!grad_input.empty()) grad_input[in_idx] += go * weight[w_idx];
              }
            }
          }
        }
      }
    }
  }
}

#define PNEUNET_INSTANTIATE(T)                                                        \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>,      \
                          std::size_t, std::size_t, std::size_t);                    \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,           \
                                  std::span<const T>, std::span<const T>,            \
                                  std::span<T>);                                     \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>,          \
                                   std::span<const T>, std::span<const T>,           \
                                   std::span<T>, std::span<T>, std::span<T>);
PNEUNET_INSTANTIATE(float)
PNEUNET_INSTANTIATE(double)
#undef PNEUNET_INSTANTIATE

}  // namespace pneunet::kernels::reference
