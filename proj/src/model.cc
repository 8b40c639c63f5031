#include "pneunet/model.h"

#include <algorithm>

#include "pneunet/error.h"

namespace pneunet {

namespace {

constexpr char kGapLayer[] = "gap";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void add_batchnorm_names(const std::string& prefix, bool buffers, std::vector<std::string>& out) {
  out.push_back(prefix + ".gamma");
  out.push_back(prefix + ".beta");
  if (buffers) {
    out.push_back(prefix + ".running_mean");
    out.push_back(prefix + ".running_var");
  }
}

bool needs_projection(const LayerSpec& block) {
  return block.get_size("in_channels") != block.get_size("out_channels") ||
         block.get_size("stride") != 1;
}

struct StagePlan {
  std::size_t width_multiplier;
  std::size_t stride;
};

std::vector<StagePlan> stages_for(const std::string& preset) {
  if (preset == "tiny") return {{1, 1}, {2, 2}, {4, 1}};
  if (preset == "small") return {{1, 1}, {2, 2}, {4, 2}, {8, 1}};
  throw ConfigError("unknown backbone preset '" + preset + "' (expected tiny or small)");
}

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Smallest feature-map extent accepted at the CAM layer.
constexpr std::size_t kMinFeatureExtent = 4;

}  // namespace

void ModelConfig::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("input channels must be 1 or 3");
  if (height < 1 || width < 1) throw ConfigError("input extents must be positive");
  stages_for(backbone_preset);
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (head_units < 1) throw ConfigError("head_units must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"input_shape", {channels, height, width}},
          {"backbone_preset", backbone_preset},
          {"batchnorm", batchnorm},
          {"base_channels", base_channels},
          {"head_units", head_units},
          {"dropout_p", dropout_p},
          {"threshold", threshold}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.contains("input_shape")) {
      const auto& s = j.at("input_shape");
      if (!s.is_array() || s.size() != 3) throw ConfigError("input_shape must be [C,H,W]");
      c.channels = s[0].get<std::size_t>();
      c.height = s[1].get<std::size_t>();
      c.width = s[2].get<std::size_t>();
    }
    c.backbone_preset = j.value("backbone_preset", c.backbone_preset);
    c.batchnorm = j.value("batchnorm", c.batchnorm);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.head_units = j.value("head_units", c.head_units);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.threshold = j.value("threshold", c.threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> layer_parameter_names(const LayerSpec& layer, bool batchnorm_buffers) {
  std::vector<std::string> out;
  switch (layer.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kDense:
      out = {layer.name + ".weight", layer.name + ".bias"};
      break;
    case LayerKind::kBatchNorm:
      add_batchnorm_names(layer.name, batchnorm_buffers, out);
      break;
    case LayerKind::kResidualBlock: {
      const bool bn = layer.get_size("batchnorm") != 0;
      out.push_back(layer.name + ".conv1.weight");
      out.push_back(layer.name + ".conv1.bias");
      if (bn) add_batchnorm_names(layer.name + ".bn1", batchnorm_buffers, out);
      out.push_back(layer.name + ".conv2.weight");
      out.push_back(layer.name + ".conv2.bias");
      if (bn) add_batchnorm_names(layer.name + ".bn2", batchnorm_buffers, out);
      if (needs_projection(layer)) {
        out.push_back(layer.name + ".proj.weight");
        out.push_back(layer.name + ".proj.bias");
        if (bn) add_batchnorm_names(layer.name + ".proj_bn", batchnorm_buffers, out);
      }
      break;
    }
    default:
      break;
  }
  return out;
}

ModelGraph::ModelGraph(ModelConfig config, std::vector<LayerSpec> layers,
                       std::string conv_feature_layer, std::map<std::string, Tensor> parameters)
    : config_(std::move(config)),
      layers_(std::move(layers)),
      conv_feature_layer_(std::move(conv_feature_layer)),
      parameters_(std::move(parameters)) {
  std::vector<std::string> seen;
  for (const LayerSpec& layer : layers_) {
    layer.validate();
    if (std::find(seen.begin(), seen.end(), layer.name) != seen.end()) {
      throw ConfigError("duplicate layer name '" + layer.name + "'");
    }
    seen.push_back(layer.name);
    for (const std::string& p : layer_parameter_names(layer, true)) {
      if (!parameters_.count(p)) throw ConfigError("missing parameter '" + p + "'");
    }
  }
  feature_layer_index();
  for (const auto& [name, _] : parameters_) trainable_[name] = !is_buffer(name);
}

bool ModelGraph::has_head() const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::kSigmoid; });
}

const Tensor& ModelGraph::parameter(const std::string& name) const {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ModelGraph::mutable_parameter(const std::string& name) {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

bool ModelGraph::trainable(const std::string& name) const {
  auto it = trainable_.find(name);
  if (it == trainable_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ModelGraph::set_trainable(const std::string& name, bool value) {
  auto it = trainable_.find(name);
  if (it == trainable_.end()) throw ConfigError("unknown parameter '" + name + "'");
  it->second = value && !is_buffer(name);
}

std::vector<std::string> ModelGraph::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : trainable_) {
    if (t) out.push_back(name);
  }
  return out;
}

bool ModelGraph::is_buffer(const std::string& name) {
  return ends_with(name, ".running_mean") || ends_with(name, ".running_var");
}

bool ModelGraph::is_backbone(const std::string& name) const {
  const std::string layer = name.substr(0, name.find('.'));
  for (const LayerSpec& l : layers_) {
    if (l.kind == LayerKind::kGlobalAvgPool) return false;
    if (l.name == layer) return true;
  }
  return false;
}

bool ModelGraph::backbone_trainable() const {
  for (const auto& [name, t] : trainable_) {
    if (t && is_backbone(name)) return true;
  }
  return false;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters_) {
    if (!is_buffer(name)) n += t.size();
  }
  return n;
}

std::size_t ModelGraph::feature_layer_index() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == conv_feature_layer_) {
      const LayerKind k = layers_[i].kind;
      if (k != LayerKind::kConv2d && k != LayerKind::kResidualBlock &&
          k != LayerKind::kBatchNorm && k != LayerKind::kRelu && k != LayerKind::kMaxPool2d) {
        throw ConfigError("conv_feature_layer '" + conv_feature_layer_ +
                          "' does not produce a 4-D activation");
      }
      return i;
    }
  }
  throw ConfigError("conv_feature_layer '" + conv_feature_layer_ + "' not found");
}

Var ModelGraph::param_var(Tape& tape, const std::string& name, const ForwardOptions& options,
                          ForwardPass& pass) const {
  auto it = pass.parameters.find(name);
  if (it != pass.parameters.end()) return it->second;
  const Tensor& value = parameter(name);
  const Var v = (trainable(name) || options.track_frozen) ? tape.variable(value)
                                                          : tape.constant(value);
  pass.parameters.emplace(name, v);
  return v;
}

Var ModelGraph::run_layers(Tape& tape, Var x, std::size_t begin, std::size_t end,
                           const ForwardOptions& options, ForwardPass& pass) const {
  const Mode bn_mode =
      (options.mode == Mode::kTrain && backbone_trainable()) ? Mode::kTrain : Mode::kEval;
  auto bn_params = [&](const std::string& prefix) {
    BatchNormParams<float> p;
    p.gamma = param_var(tape, prefix + ".gamma", options, pass);
    p.beta = param_var(tape, prefix + ".beta", options, pass);
    p.running_mean = &parameter(prefix + ".running_mean");
    p.running_var = &parameter(prefix + ".running_var");
    return p;
  };
  auto keep_update = [&](const std::string& prefix, const BatchNormUpdate<float>& u) {
    pass.buffer_updates[prefix + ".running_mean"] = u.running_mean;
    pass.buffer_updates[prefix + ".running_var"] = u.running_var;
  };

  for (std::size_t i = begin; i < end; ++i) {
    const LayerSpec& layer = layers_[i];
    const std::string& n = layer.name;
    switch (layer.kind) {
      case LayerKind::kConv2d:
        x = conv2d(tape, x, param_var(tape, n + ".weight", options, pass),
                   param_var(tape, n + ".bias", options, pass), layer.get_size("stride"),
                   layer.get_size("padding"));
        break;
      case LayerKind::kBatchNorm: {
        BatchNormUpdate<float> update;
        x = batchnorm(tape, x, bn_params(n), bn_mode, bn_mode == Mode::kTrain ? &update : nullptr);
        if (bn_mode == Mode::kTrain) keep_update(n, update);
        break;
      }
      case LayerKind::kRelu:
        x = relu(tape, x);
        break;
      case LayerKind::kSigmoid:
        pass.logits = x;
        x = sigmoid(tape, x);
        pass.probabilities = x;
        break;
      case LayerKind::kMaxPool2d:
        x = maxpool2d(tape, x, layer.get_size("window"), layer.get_size("stride"));
        break;
      case LayerKind::kGlobalAvgPool:
        x = global_avg_pool(tape, x);
        break;
      case LayerKind::kFlatten:
        x = flatten(tape, x);
        break;
      case LayerKind::kDense:
        x = dense(tape, x, param_var(tape, n + ".weight", options, pass),
                  param_var(tape, n + ".bias", options, pass));
        break;
      case LayerKind::kDropout:
        x = dropout(tape, x, layer.get("p"), options.mode, options.rng);
        break;
      case LayerKind::kResidualBlock: {
        ResidualBlockParams<float> p;
        p.stride = layer.get_size("stride");
        p.conv1_weight = param_var(tape, n + ".conv1.weight", options, pass);
        p.conv1_bias = param_var(tape, n + ".conv1.bias", options, pass);
        p.conv2_weight = param_var(tape, n + ".conv2.weight", options, pass);
        p.conv2_bias = param_var(tape, n + ".conv2.bias", options, pass);
        const bool bn = layer.get_size("batchnorm") != 0;
        if (bn) {
          p.bn1 = bn_params(n + ".bn1");
          p.bn2 = bn_params(n + ".bn2");
        }
        if (needs_projection(layer)) {
          p.proj_weight = param_var(tape, n + ".proj.weight", options, pass);
          p.proj_bias = param_var(tape, n + ".proj.bias", options, pass);
          if (bn) p.proj_bn = bn_params(n + ".proj_bn");
        }
        ResidualBlockUpdates<float> updates;
        x = residual_block(tape, x, p, bn_mode, bn_mode == Mode::kTrain ? &updates : nullptr);
        if (updates.bn1) keep_update(n + ".bn1", *updates.bn1);
        if (updates.bn2) keep_update(n + ".bn2", *updates.bn2);
        if (updates.proj_bn) keep_update(n + ".proj_bn", *updates.proj_bn);
        break;
      }
    }
    if (n == conv_feature_layer_) {
      if (options.watch_features) x = tape.watch(x);
      pass.features = x;
    }
  }
  return x;
}

ForwardPass ModelGraph::forward(Tape& tape, const Tensor& batch,
                                const ForwardOptions& options) const {
  const Shape& s = batch.shape();
  const Shape in = input_shape();
  if (s.rank() != 4 || s[1] != in[0] || s[2] != in[1] || s[3] != in[2]) {
    throw ShapeError("model expects [N," + std::to_string(in[0]) + "," + std::to_string(in[1]) +
                     "," + std::to_string(in[2]) + "] input, got " + s.str());
  }
  ForwardPass pass;
  pass.input = tape.constant(batch);
  run_layers(tape, pass.input, 0, layers_.size(), options, pass);
  return pass;
}

ForwardPass ModelGraph::forward_from_features(Tape& tape, const Tensor& features,
                                              const ForwardOptions& options) const {
  if (features.rank() != 4) throw ShapeError("features must be [N,C,h,w]");
  ForwardPass pass;
  pass.input = tape.constant(features);
  pass.features = options.watch_features ? tape.watch(pass.input) : pass.input;
  run_layers(tape, pass.features, feature_layer_index() + 1, layers_.size(), options, pass);
  return pass;
}

ModelGraph ModelGraph::backbone_only() const {
  const std::size_t last = feature_layer_index();
  std::vector<LayerSpec> layers(layers_.begin(), layers_.begin() + last + 1);
  std::map<std::string, Tensor> params;
  for (const LayerSpec& l : layers) {
    for (const std::string& p : layer_parameter_names(l, true)) params[p] = parameter(p);
  }
  ModelGraph out(config_, std::move(layers), conv_feature_layer_, std::move(params));
  for (const auto& [name, _] : out.parameters_) out.trainable_[name] = trainable(name);
  out.metadata_ = metadata_;
  return out;
}

void ModelGraph::apply_buffer_updates(const std::map<std::string, Tensor>& updates) {
  for (const auto& [name, value] : updates) {
    Tensor& dst = mutable_parameter(name);
    if (dst.shape() != value.shape()) throw ShapeError("buffer update shape mismatch for " + name);
    dst = value;
  }
}

ModelGraph build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> params;
  const std::size_t w = config.base_channels;
  const double bn = config.batchnorm ? 1.0 : 0.0;

  std::size_t h = config.height, wd = config.width;
  auto shrink = [&](std::size_t kernel, std::size_t stride, std::size_t pad) {
    h = conv_out(h, kernel, stride, pad);
    wd = conv_out(wd, kernel, stride, pad);
  };

  auto add_conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    params[name + ".weight"] = kaiming_uniform(Shape{out, in, k, k}, in * k * k, rng);
    params[name + ".bias"] = Tensor::zeros(Shape{out});
  };
  auto add_bn = [&](const std::string& prefix, std::size_t ch) {
    params[prefix + ".gamma"] = Tensor::full(Shape{ch}, 1.0f);
    params[prefix + ".beta"] = Tensor::zeros(Shape{ch});
    params[prefix + ".running_mean"] = Tensor::zeros(Shape{ch});
    params[prefix + ".running_var"] = Tensor::full(Shape{ch}, 1.0f);
  };

  layers.push_back({LayerKind::kConv2d, "stem",
                    {{"in_channels", double(config.channels)}, {"out_channels", double(w)},
                     {"kernel", 3}, {"stride", 2}, {"padding", 1}}});
  add_conv("stem", config.channels, w, 3);
  shrink(3, 2, 1);
  if (config.batchnorm) {
    layers.push_back({LayerKind::kBatchNorm, "stem_bn", {{"channels", double(w)}}});
    add_bn("stem_bn", w);
  }
  layers.push_back({LayerKind::kRelu, "stem_relu", {}});
  layers.push_back({LayerKind::kMaxPool2d, "stem_pool", {{"window", 2}, {"stride", 2}}});
  if (h < 2 || wd < 2) {
    throw ConfigError("input " + config.input_shape().str() + " too small for the backbone");
  }
  shrink(2, 2, 0);

  std::size_t in_ch = w;
  std::string last_stage;
  const auto stages = stages_for(config.backbone_preset);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::size_t out_ch = w * stages[s].width_multiplier;
    const std::size_t stride = stages[s].stride;
    const std::string name = "stage" + std::to_string(s + 1);
    LayerSpec block{LayerKind::kResidualBlock, name,
                    {{"in_channels", double(in_ch)}, {"out_channels", double(out_ch)},
                     {"stride", double(stride)}, {"batchnorm", bn}}};
    add_conv(name + ".conv1", in_ch, out_ch, 3);
    if (config.batchnorm) add_bn(name + ".bn1", out_ch);
    add_conv(name + ".conv2", out_ch, out_ch, 3);
    if (config.batchnorm) add_bn(name + ".bn2", out_ch);
    if (needs_projection(block)) {
      add_conv(name + ".proj", in_ch, out_ch, 1);
      if (config.batchnorm) add_bn(name + ".proj_bn", out_ch);
    }
    shrink(3, stride, 1);
    layers.push_back(std::move(block));
    in_ch = out_ch;
    last_stage = name;
  }
  if (h < kMinFeatureExtent || wd < kMinFeatureExtent) {
    throw ConfigError("input " + config.input_shape().str() + " too small for the '" +
                      config.backbone_preset + "' backbone (feature map would be " +
                      std::to_string(h) + "x" + std::to_string(wd) + ", need at least " +
                      std::to_string(kMinFeatureExtent) + "x" + std::to_string(kMinFeatureExtent) +
                      ")");
  }

  layers.push_back({LayerKind::kGlobalAvgPool, kGapLayer, {}});
  layers.push_back({LayerKind::kDense, "head_fc1",
                    {{"in_features", double(in_ch)}, {"units", double(config.head_units)}}});
  params["head_fc1.weight"] = kaiming_uniform(Shape{in_ch, config.head_units}, in_ch, rng);
  params["head_fc1.bias"] = Tensor::zeros(Shape{config.head_units});
  layers.push_back({LayerKind::kRelu, "head_relu", {}});
  layers.push_back({LayerKind::kDropout, "head_dropout", {{"p", config.dropout_p}}});
  layers.push_back({LayerKind::kDense, "head_out",
                    {{"in_features", double(config.head_units)}, {"units", 1}}});
  params["head_out.weight"] = xavier_uniform(Shape{config.head_units, 1}, config.head_units, 1, rng);
  params["head_out.bias"] = Tensor::zeros(Shape{1});
  layers.push_back({LayerKind::kSigmoid, "head_sigmoid", {}});

  ModelGraph model(config, std::move(layers), last_stage, std::move(params));
  model.metadata()["seed"] = seed;
  return model;
}

void freeze_backbone(ModelGraph& model) {
  for (const auto& [name, _] : model.parameters()) {
    model.set_trainable(name, !model.is_backbone(name));
  }
}

void unfreeze_all(ModelGraph& model) {
  for (const auto& [name, _] : model.parameters()) model.set_trainable(name, true);
}

std::size_t transfer_weights(const ModelGraph& source, ModelGraph& target) {
  std::size_t n = 0;
  for (const auto& [name, value] : source.parameters()) {
    if (!target.has_parameter(name)) {
      throw ShapeError("transfer: target has no parameter '" + name + "'");
    }
    Tensor& dst = target.mutable_parameter(name);
    if (dst.shape() != value.shape()) {
      throw ShapeError("transfer: shape mismatch for '" + name + "': " + value.shape().str() +
                       " vs " + dst.shape().str());
    }
    dst = value;
    ++n;
  }
  return n;
}

std::vector<float> predict_batch(const ModelGraph& model, const Tensor& batch) {
  if (!model.has_head()) throw ConfigError("predict needs a model with a classifier head");
  Tape tape;
  ForwardPass pass = model.forward(tape, batch, ForwardOptions{});
  const auto& probs = tape.value(pass.probabilities);
  return probs.vec();
}

float predict(const ModelGraph& model, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("predict expects a [C,H,W] image, got " + image.shape().str());
  return predict_batch(model, image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)}))[0];
}

}  // namespace pneunet
