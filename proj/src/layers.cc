#include "pneunet/layers.h"

#include <algorithm>
#include <cmath>
#include <memory>

#include "pneunet/error.h"
#include "pneunet/kernels.h"

namespace pneunet {

namespace {

constexpr std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::kConv2d, "conv2d"},
    {LayerKind::kMaxPool2d, "maxpool2d"},
    {LayerKind::kGlobalAvgPool, "global_avg_pool"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kSigmoid, "sigmoid"},
    {LayerKind::kDropout, "dropout"},
    {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kResidualBlock, "residual_block"},
    {LayerKind::kFlatten, "flatten"},
};

template <typename T>
void accumulate(BasicTensor<T>* dst, std::span<const T> src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

std::string to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

double LayerSpec::get(const std::string& key) const {
  auto it = hyper.find(key);
  if (it == hyper.end()) {
    throw ConfigError("layer '" + name + "' is missing hyperparameter '" + key + "'");
  }
  return it->second;
}

std::size_t LayerSpec::get_size(const std::string& key) const {
  const double v = get(key);
  if (v < 0 || std::floor(v) != v) {
    throw ConfigError("layer '" + name + "': '" + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

void LayerSpec::validate() const {
  if (name.empty()) throw ConfigError("layer name must not be empty");
  auto positive = [this](const char* key) {
    if (get_size(key) < 1) {
      throw ConfigError("layer '" + name + "': '" + key + "' must be >= 1");
    }
  };
  switch (kind) {
    case LayerKind::kConv2d:
      for (const char* k : {"in_channels", "out_channels", "kernel", "stride"}) positive(k);
      get_size("padding");
      break;
    case LayerKind::kMaxPool2d:
      positive("window");
      positive("stride");
      break;
    case LayerKind::kDense:
      positive("in_features");
      positive("units");
      break;
    case LayerKind::kDropout: {
      const double p = get("p");
      if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("layer '" + name + "': drop probability must be in [0, 1)");
      }
      break;
    }
    case LayerKind::kBatchNorm:
      positive("channels");
      break;
    case LayerKind::kResidualBlock:
      positive("in_channels");
      positive("out_channels");
      positive("stride");
      get_size("batchnorm");
      break;
    case LayerKind::kGlobalAvgPool:
    case LayerKind::kRelu:
    case LayerKind::kSigmoid:
    case LayerKind::kFlatten:
      break;
  }
}

template <typename T>
Var conv2d(BasicTape<T>& tape, Var input, Var kernel, Var bias, std::size_t stride,
           std::size_t padding) {
  const Shape& xs = tape.shape(input);
  const Shape& ks = tape.shape(kernel);
  const Shape& bs = tape.shape(bias);
  if (xs.rank() != 4 || ks.rank() != 4) {
    throw ShapeError("conv2d: expected 4-D input and kernel, got " + xs.str() + " and " + ks.str());
  }
  if (xs[1] != ks[1]) {
    throw ShapeError("conv2d: channel mismatch, input " + xs.str() + " kernel " + ks.str());
  }
  if (bs.rank() != 1 || bs[0] != ks[0]) throw ShapeError("conv2d: bias must be [F]");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (xs[2] + 2 * padding < ks[2] || xs[3] + 2 * padding < ks[3]) {
    throw ShapeError("conv2d: kernel " + ks.str() + " larger than padded input " + xs.str());
  }
  kernels::ConvGeometry g;
  g.batch = xs[0];
  g.in_channels = xs[1];
  g.in_h = xs[2];
  g.in_w = xs[3];
  g.out_channels = ks[0];
  g.kernel_h = ks[2];
  g.kernel_w = ks[3];
  g.stride = stride;
  g.padding = padding;
  auto out = BasicTensor<T>::zeros(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::parallel::conv2d_forward<T>(g, tape.value(input).data(), tape.value(kernel).data(),
                                       tape.value(bias).data(), out.mutable_data());
  return tape.record(
      "conv2d", std::move(out), {input, kernel, bias},
      [&tape, input, kernel, g](const BasicTensor<T>& grad, std::span<BasicTensor<T>* const> in) {
        auto span_of = [](BasicTensor<T>* t) {
          return t ? t->mutable_data() : std::span<T>();
        };
        kernels::parallel::conv2d_backward<T>(g, tape.value(input).data(),
                                              tape.value(kernel).data(), grad.data(),
                                              span_of(in[0]), span_of(in[1]), span_of(in[2]));
      });
}

template <typename T>
Var maxpool2d(BasicTape<T>& tape, Var input, std::size_t window, std::size_t stride) {
  const Shape& xs = tape.shape(input);
  if (xs.rank() != 4) throw ShapeError("maxpool2d: expected 4-D input, got " + xs.str());
  if (window < 1 || stride < 1) throw ConfigError("maxpool2d: window and stride must be >= 1");
  if (xs[2] < window || xs[3] < window) {
    throw ShapeError("maxpool2d: input " + xs.str() + " smaller than window");
  }
  kernels::PoolGeometry g{xs[0], xs[1], xs[2], xs[3], window, stride};
  auto out = BasicTensor<T>::zeros(Shape{g.batch, g.channels, g.out_h(), g.out_w()});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  kernels::maxpool_forward<T>(g, tape.value(input).data(), out.mutable_data(), *argmax);
  return tape.record("maxpool2d", std::move(out), {input},
                     [argmax](const BasicTensor<T>& grad, std::span<BasicTensor<T>* const> in) {
                       for (std::size_t o = 0; o < grad.size(); ++o) {
                         (*in[0])[(*argmax)[o]] += grad[o];
                       }
                     });
}

template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var input) {
  const Shape& xs = tape.shape(input);
  if (xs.rank() != 4) throw ShapeError("global_avg_pool: expected 4-D input, got " + xs.str());
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t area = xs[2] * xs[3];
  const auto& x = tape.value(input);
  auto out = BasicTensor<T>::zeros(Shape{xs[0], xs[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc = 0;
    for (std::size_t s = 0; s < area; ++s) acc += x[p * area + s];
    out[p] = acc / static_cast<T>(area);
  }
  return tape.record("global_avg_pool", std::move(out), {input},
                     [planes, area](const BasicTensor<T>& grad,
                                    std::span<BasicTensor<T>* const> in) {
                       const T inv = T{1} / static_cast<T>(area);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const T g = grad[p] * inv;
                         for (std::size_t s = 0; s < area; ++s) (*in[0])[p * area + s] += g;
                       }
                     });
}

template <typename T>
Var flatten(BasicTape<T>& tape, Var input) {
  const Shape& xs = tape.shape(input);
  if (xs.rank() < 1) throw ShapeError("flatten: empty shape");
  return reshape(tape, input, Shape{xs[0], xs.numel() / xs[0]});
}

template <typename T>
Var dense(BasicTape<T>& tape, Var x, Var weight, Var bias) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(weight);
  const Shape& bs = tape.shape(bias);
  if (xs.rank() != 2 || ws.rank() != 2 || xs[1] != ws[0] || bs.rank() != 1 || bs[0] != ws[1]) {
    throw ShapeError("dense: incompatible shapes x" + xs.str() + " W" + ws.str() + " b" +
                     bs.str());
  }
  const std::size_t n = xs[0], d = xs[1], u = ws[1];
  auto out = BasicTensor<T>::zeros(Shape{n, u});
  kernels::parallel::matmul<T>(tape.value(x).data(), tape.value(weight).data(),
                               out.mutable_data(), n, d, u);
  const auto& b = tape.value(bias);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < u; ++j) out[r * u + j] += b[j];
  }
  return tape.record(
      "dense", std::move(out), {x, weight, bias},
      [&tape, x, weight, n, d, u](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
        if (in[0]) {
          std::vector<T> tmp(n * d);
          kernels::parallel::matmul_a_bt<T>(g.data(), tape.value(weight).data(), tmp, n, u, d);
          accumulate<T>(in[0], tmp);
        }
        if (in[1]) {
          std::vector<T> tmp(d * u);
          kernels::parallel::matmul_at_b<T>(tape.value(x).data(), g.data(), tmp, d, n, u);
          accumulate<T>(in[1], tmp);
        }
        if (in[2]) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < u; ++j) (*in[2])[j] += g[r * u + j];
          }
        }
      });
}

template <typename T>
Var relu(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  auto out = BasicTensor<T>::zeros(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record("relu", std::move(out), {x},
                     [&tape, x](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       const auto& v = tape.value(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (v[i] > T{0}) (*in[0])[i] += g[i];
                       }
                     });
}

template <typename T>
Var sigmoid(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  const T lo = static_cast<T>(kProbEpsilon);
  const T hi = static_cast<T>(1.0 - kProbEpsilon);
  auto out = BasicTensor<T>::zeros(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    T s;
    if (v >= T{0}) {
      s = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T{1} + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  const Var y{tape.size()};
  return tape.record("sigmoid", std::move(out), {x},
                     [&tape, y](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       const auto& s = tape.value(y);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*in[0])[i] += g[i] * s[i] * (T{1} - s[i]);
                       }
                     });
}

template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0, 1)");
  auto mask = BasicTensor<T>::zeros(shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (T& m : mask.mutable_data()) m = rng.uniform() < p ? T{0} : keep_scale;
  return mask;
}

template <typename T>
Var dropout_with_mask(BasicTape<T>& tape, Var x, const BasicTensor<T>& mask) {
  const auto& xv = tape.value(x);
  if (mask.shape() != xv.shape()) throw ShapeError("dropout: mask shape mismatch");
  auto out = BasicTensor<T>::zeros(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * mask[i];
  return tape.record("dropout", std::move(out), {x},
                     [mask](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * mask[i];
                     });
}

template <typename T>
Var dropout(BasicTape<T>& tape, Var x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  if (!rng) throw ConfigError("dropout: train mode needs a random generator");
  return dropout_with_mask(tape, x, dropout_mask<T>(tape.shape(x), p, *rng));
}

template <typename T>
Var batchnorm(BasicTape<T>& tape, Var x, const BatchNormParams<T>& params, Mode mode,
              BatchNormUpdate<T>* update) {
  const Shape& xs = tape.shape(x);
  if (xs.rank() != 4) throw ShapeError("batchnorm: expected 4-D input, got " + xs.str());
  const std::size_t n = xs[0], c = xs[1], area = xs[2] * xs[3];
  const auto& gamma = tape.value(params.gamma);
  const auto& beta = tape.value(params.beta);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batchnorm: gamma/beta must be [C]");
  }
  const auto& xv = tape.value(x);
  const T eps = static_cast<T>(kBatchNormEpsilon);

  std::vector<T> mean(c), var(c);
  if (mode == Mode::kTrain) {
    if (n < 2) throw ShapeError("batchnorm: train mode needs a batch of at least 2");
    const T count = static_cast<T>(n * area);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data().data() + (b * c + ch) * area;
        for (std::size_t s = 0; s < area; ++s) acc += p[s];
      }
      mean[ch] = acc / count;
      T sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data().data() + (b * c + ch) * area;
        for (std::size_t s = 0; s < area; ++s) sq += (p[s] - mean[ch]) * (p[s] - mean[ch]);
      }
      var[ch] = sq / count;
    }
    if (update) {
      if (!params.running_mean || !params.running_var) {
        throw ConfigError("batchnorm: running statistics required for an update");
      }
      const T m = static_cast<T>(kBatchNormMomentum);
      const T unbias = count / (count - T{1});
      update->running_mean = *params.running_mean;
      update->running_var = *params.running_var;
      for (std::size_t ch = 0; ch < c; ++ch) {
        update->running_mean[ch] = m * (*params.running_mean)[ch] + (T{1} - m) * mean[ch];
        update->running_var[ch] =
            m * (*params.running_var)[ch] + (T{1} - m) * var[ch] * unbias;
      }
    }
  } else {
    if (!params.running_mean || !params.running_var ||
        params.running_mean->shape() != Shape{c} || params.running_var->shape() != Shape{c}) {
      throw ShapeError("batchnorm: eval mode needs [C] running statistics");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = (*params.running_mean)[ch];
      var[ch] = (*params.running_var)[ch];
    }
  }

  auto inv_std = std::make_shared<std::vector<T>>(c);
  auto xhat = std::make_shared<BasicTensor<T>>(BasicTensor<T>::zeros(xs));
  auto out = BasicTensor<T>::zeros(xs);
  for (std::size_t ch = 0; ch < c; ++ch) {
    (*inv_std)[ch] = T{1} / std::sqrt(var[ch] + eps);
  }
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * area;
      for (std::size_t s = 0; s < area; ++s) {
        const T h = (xv[base + s] - mean[ch]) * (*inv_std)[ch];
        (*xhat)[base + s] = h;
        out[base + s] = gamma[ch] * h + beta[ch];
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return tape.record(
      "batchnorm", std::move(out), {x, params.gamma, params.beta},
      [&tape, gvar = params.gamma, xhat, inv_std, n, c, area, train](
          const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
        const auto& gamma_v = tape.value(gvar);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * area;
            for (std::size_t s = 0; s < area; ++s) {
              sum_g += g[base + s];
              sum_gx += g[base + s] * (*xhat)[base + s];
            }
          }
          if (in[1]) (*in[1])[ch] += sum_gx;
          if (in[2]) (*in[2])[ch] += sum_g;
          if (!in[0]) continue;
          const T scale = gamma_v[ch] * (*inv_std)[ch];
          if (train) {
            const T m = static_cast<T>(n * area);
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c + ch) * area;
              for (std::size_t s = 0; s < area; ++s) {
                (*in[0])[base + s] +=
                    scale * (g[base + s] - sum_g / m - (*xhat)[base + s] * sum_gx / m);
              }
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c + ch) * area;
              for (std::size_t s = 0; s < area; ++s) (*in[0])[base + s] += scale * g[base + s];
            }
          }
        }
      });
}

template <typename T>
Var residual_block(BasicTape<T>& tape, Var x, const ResidualBlockParams<T>& p, Mode mode,
                   ResidualBlockUpdates<T>* updates) {
  const Shape& xs = tape.shape(x);
  if (xs.rank() != 4) throw ShapeError("residual_block: expected 4-D input, got " + xs.str());
  const std::size_t in_ch = xs[1];
  const std::size_t out_ch = tape.shape(p.conv1_weight)[0];
  const bool needs_projection = in_ch != out_ch || p.stride != 1;
  if (needs_projection && !p.proj_weight) {
    throw ShapeError("residual_block: channel or stride change needs a projection");
  }

  auto bn = [&](Var v, const std::optional<BatchNormParams<T>>& params,
                std::optional<BatchNormUpdate<T>>* slot) {
    if (!params) return v;
    BatchNormUpdate<T> upd;
    const bool want = updates && mode == Mode::kTrain;
    Var out = batchnorm(tape, v, *params, mode, want ? &upd : nullptr);
    if (want) *slot = std::move(upd);
    return out;
  };
  std::optional<BatchNormUpdate<T>> dummy1, dummy2, dummy3;
  auto* u1 = updates ? &updates->bn1 : &dummy1;
  auto* u2 = updates ? &updates->bn2 : &dummy2;
  auto* u3 = updates ? &updates->proj_bn : &dummy3;

  Var h = conv2d(tape, x, p.conv1_weight, p.conv1_bias, p.stride, 1);
  h = bn(h, p.bn1, u1);
  h = relu(tape, h);
  h = conv2d(tape, h, p.conv2_weight, p.conv2_bias, 1, 1);
  h = bn(h, p.bn2, u2);

  Var skip = x;
  if (p.proj_weight) {
    if (!p.proj_bias) throw ShapeError("residual_block: projection needs a bias");
    skip = conv2d(tape, x, *p.proj_weight, *p.proj_bias, p.stride, 0);
    skip = bn(skip, p.proj_bn, u3);
  }
  if (tape.shape(skip) != tape.shape(h)) {
    throw ShapeError("residual_block: skip " + tape.shape(skip).str() + " and residual " +
                     tape.shape(h).str() + " differ");
  }
  return relu(tape, add(tape, h, skip));
}

template <typename T>
Var softmax_cross_entropy(BasicTape<T>& tape, Var logits, const std::vector<int>& labels) {
  const Shape& ls = tape.shape(logits);
  if (ls.rank() != 2 || ls[0] != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + ls.str() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = ls[0], k = ls[1];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ConfigError("softmax_cross_entropy: label out of range");
    }
  }
  const auto& z = tape.value(logits);
  auto probs = std::make_shared<std::vector<T>>(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx) / denom;
    loss += std::log(denom) + mx - row[labels[i]];
  }
  loss /= static_cast<T>(n);
  return tape.record("softmax_cross_entropy", BasicTensor<T>::full(Shape{1}, loss), {logits},
                     [probs, labels, n, k](const BasicTensor<T>& g,
                                           std::span<BasicTensor<T>* const> in) {
                       const T s = g[0] / static_cast<T>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const T onehot = static_cast<int>(j) == labels[i] ? T{1} : T{0};
                           (*in[0])[i * k + j] += s * ((*probs)[i * k + j] - onehot);
                         }
                       }
                     });
}

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  auto t = Tensor::zeros(shape);
  for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = Tensor::zeros(shape);
  for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

#define PNEUNET_INSTANTIATE(T)                                                              \
  template Var conv2d<T>(BasicTape<T>&, Var, Var, Var, std::size_t, std::size_t);          \
  template Var maxpool2d<T>(BasicTape<T>&, Var, std::size_t, std::size_t);                 \
  template Var global_avg_pool<T>(BasicTape<T>&, Var);                                     \
  template Var flatten<T>(BasicTape<T>&, Var);                                             \
  template Var dense<T>(BasicTape<T>&, Var, Var, Var);                                     \
  template Var relu<T>(BasicTape<T>&, Var);                                                \
  template Var sigmoid<T>(BasicTape<T>&, Var);                                             \
  template Var dropout<T>(BasicTape<T>&, Var, double, Mode, Rng*);                         \
  template Var dropout_with_mask<T>(BasicTape<T>&, Var, const BasicTensor<T>&);            \
  template BasicTensor<T> dropout_mask<T>(const Shape&, double, Rng&);                     \
  template Var batchnorm<T>(BasicTape<T>&, Var, const BatchNormParams<T>&, Mode,           \
                            BatchNormUpdate<T>*);                                          \
  template Var residual_block<T>(BasicTape<T>&, Var, const ResidualBlockParams<T>&, Mode,  \
                                 ResidualBlockUpdates<T>*);                                \
  template Var softmax_cross_entropy<T>(BasicTape<T>&, Var, const std::vector<int>&);
PNEUNET_INSTANTIATE(float)
PNEUNET_INSTANTIATE(double)
#undef PNEUNET_INSTANTIATE

}  // namespace pneunet
