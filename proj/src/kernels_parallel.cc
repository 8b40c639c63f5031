#include <algorithm>
#include <vector>

#include "pneunet/kernels.h"

namespace pneunet::kernels {
namespace {

// Eight independent partial sums let the compiler vectorise the reduction
// without reassociating beyond a fixed, platform-independent order.
template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += x[i + l] * y[i + l];
  }
  T tail = 0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// c[m,n] (+)= a[m,k] * b[k,n], serial.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip != T{0}) axpy(aip, b + p * n, ci, n);
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n], serial.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T api = a[p * m + i];
      if (api != T{0}) axpy(api, b + p * n, ci, n);
    }
  }
}

}  // namespace

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = columns + ((c * g.kernel_h + ky) * g.kernel_w + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* in_row = plane + iy * g.in_w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T{0} : in_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = columns + ((c * g.kernel_h + ky) * g.kernel_w + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* in_row = plane + iy * g.in_w;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) in_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input,
                     std::span<T> output, std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long planes = static_cast<long>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * g.in_h * g.in_w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (oy * g.stride) * g.in_w + ox * g.stride;
        for (std::size_t wy = 0; wy < g.window; ++wy) {
          for (std::size_t wx = 0; wx < g.window; ++wx) {
            const std::size_t idx = base + (oy * g.stride + wy) * g.in_w + ox * g.stride + wx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + oy) * ow + ox;
        output[o] = input[best];
        argmax[o] = best;
      }
    }
  }
}

namespace parallel {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) {
    gemm_nn(a.data() + i * k, b.data(), c.data() + i * n, 1, k, n, false);
  }
}

template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), T{0});
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) {
    T* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T api = a[p * m + i];
      if (api != T{0}) axpy(api, b.data() + p * n, ci, n);
    }
  }
}

template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = dot(a.data() + i * k, b.data() + j * k, k);
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output) {
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * spatial;
#pragma omp parallel
  {
    std::vector<T> columns(patch * spatial);
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(g.batch); ++b) {
      im2col(g, input.data() + b * in_stride, columns.data());
      T* out = output.data() + b * out_stride;
      gemm_nn(weight.data(), columns.data(), out, g.out_channels, patch, spatial, false);
      if (!bias.empty()) {
        for (std::size_t f = 0; f < g.out_channels; ++f) {
          T* row = out + f * spatial;
          for (std::size_t s = 0; s < spatial; ++s) row[s] += bias[f];
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
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * spatial;
  const long filters = static_cast<long>(g.out_channels);

  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (long f = 0; f < filters; ++f) {
      T acc = 0;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* row = grad_output.data() + b * out_stride + f * spatial;
        for (std::size_t s = 0; s < spatial; ++s) acc += row[s];
      }
      grad_bias[f] += acc;
    }
  }

  if (!grad_weight.empty()) {
    std::vector<T> columns(patch * spatial);
    for (std::size_t b = 0; b < g.batch; ++b) {
      im2col(g, input.data() + b * in_stride, columns.data());
      const T* go = grad_output.data() + b * out_stride;
#pragma omp parallel for schedule(static)
      for (long f = 0; f < filters; ++f) {
        T* gw = grad_weight.data() + f * patch;
        const T* gof = go + f * spatial;
        for (std::size_t p = 0; p < patch; ++p) {
          gw[p] += dot(gof, columns.data() + p * spatial, spatial);
        }
      }
    }
  }

  if (!grad_input.empty()) {
#pragma omp parallel
    {
      std::vector<T> columns(patch * spatial);
#pragma omp for schedule(static)
      for (long b = 0; b < static_cast<long>(g.batch); ++b) {
        std::fill(columns.begin(), columns.end(), T{0});
        gemm_tn(weight.data(), grad_output.data() + b * out_stride, columns.data(),
                patch, g.out_channels, spatial);
        col2im(g, columns.data(), grad_input.data() + b * in_stride);
      }
    }
  }
}

}  // namespace parallel

#define PNEUNET_INSTANTIATE(T)                                                          \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                          \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                          \
  template void maxpool_forward<T>(const PoolGeometry&, std::span<const T>,            \
                                   std::span<T>, std::span<std::size_t>);              \
  template void parallel::matmul<T>(std::span<const T>, std::span<const T>,            \
                                    std::span<T>, std::size_t, std::size_t,            \
                                    std::size_t);                                      \
  template void parallel::matmul_at_b<T>(std::span<const T>, std::span<const T>,       \
                                         std::span<T>, std::size_t, std::size_t,       \
                                         std::size_t);                                 \
  template void parallel::matmul_a_bt<T>(std::span<const T>, std::span<const T>,       \
                                         std::span<T>, std::size_t, std::size_t,       \
                                         std::size_t);                                 \
  template void parallel::conv2d_forward<T>(const ConvGeometry&, std::span<const T>,   \
                                            std::span<const T>, std::span<const T>,    \
                                            std::span<T>);                             \
  template void parallel::conv2d_backward<T>(const ConvGeometry&, std::span<const T>,  \
                                             std::span<const T>, std::span<const T>,   \
                                             std::span<T>, std::span<T>, std::span<T>);
PNEUNET_INSTANTIATE(float)
PNEUNET_INSTANTIATE(double)
#undef PNEUNET_INSTANTIATE

}  // namespace pneunet::kernels
