#ifndef PNEUNET_LAYERS_H_
#define PNEUNET_LAYERS_H_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pneunet/autograd.h"
#include "pneunet/random.h"

namespace pneunet {

enum class Mode { kTrain, kEval };

enum class LayerKind {
  kConv2d,
  kMaxPool2d,
  kGlobalAvgPool,
  kDense,
  kRelu,
  kSigmoid,
  kDropout,
  kBatchNorm,
  kResidualBlock,
  kFlatten,
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

// One entry of a model's ordered layer list. Hyperparameter keys per kind:
//   conv2d          in_channels, out_channels, kernel, stride, padding
//   maxpool2d       window, stride
//   dense           in_features, units
//   dropout         p
//   batchnorm       channels
//   residual_block  in_channels, out_channels, stride, batchnorm (0/1)
struct LayerSpec {
  LayerKind kind;
  std::string name;
  std::map<std::string, double> hyper;

  double get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;

  // Throws ConfigError when a required key is missing or out of range.
  void validate() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// conv2d over [N,C,H,W] with kernel [F,C,kh,kw] and bias [F]; cross-correlation,
// zero padding.
template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, Var bias, std::size_t stride,
           std::size_t padding);

template <typename T>
Var maxpool2d(BasicTape<T>& tape, Var input, std::size_t window = 2, std::size_t stride = 2);

// [N,C,H,W] -> [N,C]
template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var input);

// [N,...] -> [N, rest]
template <typename T>
Var flatten(BasicTape<T>& tape, Var input);

// x[N,d] * W[d,u] + b[u]
template <typename T>
Var dense(BasicTape<T>& tape, Var x, Var weight, Var bias);

template <typename T>
Var relu(BasicTape<T>& tape, Var x);

// Output clamped to [kProbEpsilon, 1 - kProbEpsilon].
template <typename T>
Var sigmoid(BasicTape<T>& tape, Var x);

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode is the identity.
template <typename T>
Var dropout(BasicTape<T>& tape, Var x, double p, Mode mode, Rng* rng);

// Applies a precomputed multiplicative mask (entries 0 or 1/(1-p)).
template <typename T>
Var dropout_with_mask(BasicTape<T>& tape, Var x, const BasicTensor<T>& mask);

template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double p, Rng& rng);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename T>
struct BatchNormParams {
  Var gamma;
  Var beta;
  const BasicTensor<T>* running_mean = nullptr;
  const BasicTensor<T>* running_var = nullptr;
};

// Running statistics after a train-mode pass:
//   running = momentum * running + (1 - momentum) * batch
// with the unbiased batch variance.
template <typename T>
struct BatchNormUpdate {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
};

// Train mode normalises by the batch statistics over (N,H,W) and requires
// N >= 2; eval mode uses the running statistics. `update` (optional) receives
// the new running statistics in train mode.
template <typename T>
Var batchnorm(BasicTape<T>& tape, Var x, const BatchNormParams<T>& params, Mode mode,
              BatchNormUpdate<T>* update = nullptr);

template <typename T>
struct ResidualBlockParams {
  std::size_t stride = 1;
  Var conv1_weight, conv1_bias;
  Var conv2_weight, conv2_bias;
  std::optional<BatchNormParams<T>> bn1, bn2;
  // 1x1 projection on the skip path; required when channels or stride change.
  std::optional<Var> proj_weight, proj_bias;
  std::optional<BatchNormParams<T>> proj_bn;
};

template <typename T>
struct ResidualBlockUpdates {
  std::optional<BatchNormUpdate<T>> bn1, bn2, proj_bn;
};

// relu(F(x) + skip(x)), F = conv3x3 -> (bn) -> relu -> conv3x3 -> (bn).
template <typename T>
Var residual_block(BasicTape<T>& tape, Var x, const ResidualBlockParams<T>& params, Mode mode,
                   ResidualBlockUpdates<T>* updates = nullptr);

// Mean softmax cross-entropy of logits [N,K] against class indices.
template <typename T>
Var softmax_cross_entropy(BasicTape<T>& tape, Var logits, const std::vector<int>& labels);

// Weight initialisation. Kaiming-uniform (fan-in) for layers feeding a ReLU,
// Xavier-uniform for the sigmoid output layer.
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);
Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace pneunet

#endif  // PNEUNET_LAYERS_H_
