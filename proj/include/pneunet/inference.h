#ifndef PNEUNET_INFERENCE_H_
#define PNEUNET_INFERENCE_H_

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "pneunet/explain.h"
#include "pneunet/image.h"
#include "pneunet/model.h"

namespace pneunet {

inline constexpr const char* kPositiveLabel = "PNEUMONIA";
inline constexpr const char* kNegativeLabel = "NORMAL";

// Serving boundary: strictly above the threshold is PNEUMONIA.
inline const char* serving_label(double probability, double threshold) {
  return probability > threshold ? kPositiveLabel : kNegativeLabel;
}

std::string base64_encode(std::string_view bytes);
// Throws FormatError on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

struct PredictionResult {
  std::string label;
  double probability = 0.0;
  double threshold = 0.5;
  // Base64 PNG overlay; present for PNEUMONIA or when requested.
  std::optional<std::string> heatmap_png;
  std::string model_version;
  double latency_ms = 0.0;

  // Keys: label, probability, threshold, heatmap_png (omitted when absent),
  // model_version, latency_ms.
  nlohmann::json to_json() const;
};

// Read-only wrapper shared by the CLI and the HTTP service. Every call builds
// its own tape, so one engine may serve concurrent callers.
class InferenceEngine {
 public:
  explicit InferenceEngine(ModelGraph model);

  const ModelGraph& model() const { return model_; }
  const std::string& version() const { return version_; }

  // Resizes to the model resolution and scales to [0,1].
  Tensor preprocess(const ImageBuffer& image) const;

  // threshold defaults to the model's configured threshold.
  PredictionResult predict(const ImageBuffer& image, std::optional<double> threshold = {},
                           bool always_cam = false) const;

  // Grad-CAM overlay on the resized input.
  ImageBuffer overlay(const ImageBuffer& image, double blend = 0.4) const;

  // {input_shape, threshold, backbone_preset, parameter_count, version, metadata}
  nlohmann::json model_card() const;

 private:
  ModelGraph model_;
  std::string version_;
};

}  // namespace pneunet

#endif  // PNEUNET_INFERENCE_H_
