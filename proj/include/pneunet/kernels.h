#ifndef PNEUNET_KERNELS_H_
#define PNEUNET_KERNELS_H_

#include <cstddef>
#include <span>

namespace pneunet::kernels {

// Geometry of a batched 2-D cross-correlation with zero padding.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * patch_size(); }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t window = 2;
  std::size_t stride = 2;

  std::size_t out_h() const { return (in_h - window) / stride + 1; }
  std::size_t out_w() const { return (in_w - window) / stride + 1; }
};

// Straightforward loops in the textbook order. Single-threaded; kept as the
// correctness baseline for the tuned kernels and for the benchmark.
namespace reference {

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output);

// Accumulates into whichever gradient spans are non-empty.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

}  // namespace reference

// im2col + GEMM kernels parallelised with OpenMP. Work is split only across
// independent outputs (batch items for activations, filters for weight
// gradients) so results are bitwise identical for any thread count.
namespace parallel {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

// c[m,n] = a[k,m]^T * b[k,n]
template <typename T>
void matmul_at_b(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n);

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void matmul_a_bt(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias,
                    std::span<T> output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

}  // namespace parallel

// Max pooling. argmax receives the flat input index chosen for every output
// element; ties resolve to the first element in row-major window order.
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input,
                     std::span<T> output, std::span<std::size_t> argmax);

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns);

template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image);

}  // namespace pneunet::kernels

#endif  // PNEUNET_KERNELS_H_
