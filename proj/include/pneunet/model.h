#ifndef PNEUNET_MODEL_H_
#define PNEUNET_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pneunet/autograd.h"
#include "pneunet/layers.h"
#include "pneunet/random.h"

namespace pneunet {

// Architecture knobs. JSON keys: input_shape [C,H,W], backbone_preset
// ("tiny" = 3 residual stages, "small" = 4), batchnorm, base_channels,
// head_units, dropout_p, threshold.
struct ModelConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::string backbone_preset = "tiny";
  bool batchnorm = true;
  std::size_t base_channels = 8;
  std::size_t head_units = 50;
  double dropout_p = 0.5;
  double threshold = 0.5;

  Shape input_shape() const { return Shape{channels, height, width}; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Result of one forward sweep over a batch.
struct ForwardPass {
  Var input;
  // Output of the CAM target layer ([N,C,h,w]).
  Var features;
  // Pre-sigmoid scores [N,1] and probabilities [N,1]; invalid for a
  // backbone-only graph.
  Var logits;
  Var probabilities;
  std::map<std::string, Var> parameters;
  // New batchnorm running statistics when the backbone ran in train mode.
  std::map<std::string, Tensor> buffer_updates;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  // Required for train-mode dropout.
  Rng* rng = nullptr;
  // Record frozen parameters as gradient-carrying variables too.
  bool track_frozen = false;
  // Insert a watch node on the feature map so its gradient is retrievable.
  bool watch_features = false;
};

// Ordered layer list with named parameters. Layers before the global average
// pool form the backbone; the rest is the classifier head. Batchnorm running
// statistics are stored as never-trainable buffers alongside the parameters.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(ModelConfig config, std::vector<LayerSpec> layers, std::string conv_feature_layer,
             std::map<std::string, Tensor> parameters);

  const ModelConfig& config() const { return config_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::string& conv_feature_layer() const { return conv_feature_layer_; }
  Shape input_shape() const { return config_.input_shape(); }
  bool has_head() const;

  const std::map<std::string, Tensor>& parameters() const { return parameters_; }
  const Tensor& parameter(const std::string& name) const;
  Tensor& mutable_parameter(const std::string& name);
  bool has_parameter(const std::string& name) const { return parameters_.count(name) > 0; }

  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool value);
  std::vector<std::string> trainable_names() const;
  static bool is_buffer(const std::string& name);
  bool is_backbone(const std::string& name) const;
  bool backbone_trainable() const;

  // Number of scalar weights, buffers excluded.
  std::size_t parameter_count() const;

  // Free-form checkpoint metadata (epoch, best_val_loss, seed, created_at, ...).
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  // Full forward over a [N,C,H,W] batch. The backbone's batchnorm layers run
  // in train mode only when the backbone is trainable.
  ForwardPass forward(Tape& tape, const Tensor& batch, const ForwardOptions& options) const;

  // Head-only forward from precomputed feature maps (output of
  // conv_feature_layer).
  ForwardPass forward_from_features(Tape& tape, const Tensor& features,
                                    const ForwardOptions& options) const;

  // Copy of the layers up to and including conv_feature_layer.
  ModelGraph backbone_only() const;

  // Applies buffer updates produced by a train-mode forward.
  void apply_buffer_updates(const std::map<std::string, Tensor>& updates);

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;

 private:
  std::size_t feature_layer_index() const;
  Var run_layers(Tape& tape, Var x, std::size_t begin, std::size_t end,
                 const ForwardOptions& options, ForwardPass& pass) const;
  Var param_var(Tape& tape, const std::string& name, const ForwardOptions& options,
                ForwardPass& pass) const;

  ModelConfig config_;
  std::vector<LayerSpec> layers_;
  std::string conv_feature_layer_;
  std::map<std::string, Tensor> parameters_;
  std::map<std::string, bool> trainable_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

// Parameter and buffer names owned by one layer, in a fixed order.
std::vector<std::string> layer_parameter_names(const LayerSpec& layer, bool batchnorm_buffers);

// stem conv -> (bn) -> relu -> maxpool -> residual stages -> global_avg_pool
// -> dense(head_units, relu) -> dropout -> dense(1) -> sigmoid. Throws
// ConfigError if the input is too small for the downsampling chain.
ModelGraph build_model(const ModelConfig& config, std::uint64_t seed);

// Marks backbone parameters frozen and head parameters trainable.
void freeze_backbone(ModelGraph& model);
void unfreeze_all(ModelGraph& model);

// Copies every source parameter and buffer into the target by name. Throws
// ShapeError on a missing name or a shape mismatch. Returns the count.
std::size_t transfer_weights(const ModelGraph& source, ModelGraph& target);

// Eval-mode probabilities for a [N,C,H,W] batch.
std::vector<float> predict_batch(const ModelGraph& model, const Tensor& batch);

// Eval-mode probability for one [C,H,W] image.
float predict(const ModelGraph& model, const Tensor& image);

inline bool is_positive(float probability, double threshold) {
  return probability >= threshold;
}

}  // namespace pneunet

#endif  // PNEUNET_MODEL_H_
