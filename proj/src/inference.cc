#include "pneunet/inference.h"

#include <array>
#include <chrono>
#include <cstdio>

#include "pneunet/checkpoint.h"
#include "pneunet/error.h"

namespace pneunet {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) |
                            std::uint8_t(bytes[i + 2]);
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8);
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> table;
  table.fill(-1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t pad = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '=') {
      if (i + 2 < text.size()) throw FormatError("misplaced base64 padding");
      ++pad;
      continue;
    }
    if (pad) throw FormatError("misplaced base64 padding");
    const int v = table[static_cast<unsigned char>(c)];
    if (v < 0) throw FormatError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xff);
    }
  }
  return out;
}

nlohmann::json PredictionResult::to_json() const {
  nlohmann::json j{{"label", label},
                   {"probability", probability},
                   {"threshold", threshold},
                   {"model_version", model_version},
                   {"latency_ms", latency_ms}};
  if (heatmap_png) j["heatmap_png"] = *heatmap_png;
  return j;
}

InferenceEngine::InferenceEngine(ModelGraph model) : model_(std::move(model)) {
  if (!model_.has_head()) throw ConfigError("inference needs a model with a classifier head");
  char buf[32];
  std::snprintf(buf, sizeof buf, "pneunet-%012llx",
                static_cast<unsigned long long>(fnv1a(serialize_checkpoint(model_)) >> 16));
  version_ = buf;
}

Tensor InferenceEngine::preprocess(const ImageBuffer& image) const {
  const ModelConfig& c = model_.config();
  return to_tensor(resize_bilinear(image, c.width, c.height), c.channels);
}

PredictionResult InferenceEngine::predict(const ImageBuffer& image, std::optional<double> threshold,
                                          bool always_cam) const {
  const auto t0 = std::chrono::steady_clock::now();
  const double thr = threshold.value_or(model_.config().threshold);
  if (!(thr >= 0.0 && thr <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  const ModelConfig& c = model_.config();
  const ImageBuffer resized = resize_bilinear(image, c.width, c.height);
  const Tensor input = to_tensor(resized, c.channels);

  PredictionResult r;
  r.threshold = thr;
  r.model_version = version_;
  r.probability = pneunet::predict(model_, input);
  r.label = serving_label(r.probability, thr);
  if (r.label == kPositiveLabel || always_cam) {
    const CamResult cam = grad_cam(model_, input);
    r.heatmap_png = base64_encode(encode_png(render_overlay(resized, cam.heatmap.upsampled)));
  }
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

ImageBuffer InferenceEngine::overlay(const ImageBuffer& image, double blend) const {
  const ModelConfig& c = model_.config();
  const ImageBuffer resized = resize_bilinear(image, c.width, c.height);
  const CamResult cam = grad_cam(model_, to_tensor(resized, c.channels));
  return render_overlay(resized, cam.heatmap.upsampled, blend);
}

nlohmann::json InferenceEngine::model_card() const {
  const ModelConfig& c = model_.config();
  return {{"input_shape", {c.channels, c.height, c.width}},
          {"threshold", c.threshold},
          {"backbone_preset", c.backbone_preset},
          {"parameter_count", model_.parameter_count()},
          {"version", version_},
          {"metadata", model_.metadata()}};
}

}  // namespace pneunet
