#ifndef PNEUNET_IMAGE_H_
#define PNEUNET_IMAGE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pneunet/random.h"
#include "pneunet/tensor.h"

namespace pneunet {

// 8-bit interleaved pixels, rows top to bottom. channels is 1 or 3.
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  // Throws FormatError unless pixels.size() == width * height * channels.
  void validate() const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

enum class ImageFormat { kPgm, kPng, kJpeg };

// Sniffs the magic bytes; nullopt for anything unsupported.
std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes);

// Decodes baseline JPEG, 8-bit PNG or binary PGM (P5). Grayscale stays one
// channel; colour becomes RGB and alpha is dropped. Truncated or corrupt
// input throws FormatError; no partial image is ever returned.
ImageBuffer decode_image(std::span<const std::uint8_t> bytes,
                         std::optional<ImageFormat> format = std::nullopt);
ImageBuffer decode_image(const std::string& bytes);

std::string encode_png(const ImageBuffer& image);
std::string encode_pgm(const ImageBuffer& image);
std::string encode_jpeg(const ImageBuffer& image, int quality = 95);

ImageBuffer read_image(const std::filesystem::path& path);
// Format chosen from the extension (.png, .pgm, .jpg/.jpeg).
void write_image(const std::filesystem::path& path, const ImageBuffer& image);

// Bilinear resampling with half-pixel centres:
//   src = (dst + 0.5) * in / out - 0.5, clamped to the edge.
// Results are rounded to nearest and clamped to [0, 255].
ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t out_w, std::size_t out_h);

// Same convention over a single-channel float grid, no rounding.
std::vector<float> resize_bilinear(std::span<const float> grid, std::size_t in_w,
                                   std::size_t in_h, std::size_t out_w, std::size_t out_h);

ImageBuffer hflip(const ImageBuffer& image);

// Rotation about the image centre by `degrees` (counter-clockwise), bilinear
// resampling, samples falling outside the source filled with 0.
ImageBuffer rotate(const ImageBuffer& image, double degrees);

ImageBuffer to_grayscale(const ImageBuffer& image);

struct AugmentationConfig {
  double hflip_prob = 0.5;
  double rotation_max_degrees = 10.0;

  void validate() const;
};

// Mirror with probability hflip_prob, then rotate by an angle drawn uniformly
// from [-max, +max]. Exactly two draws are taken from rng per call.
ImageBuffer augment(const ImageBuffer& image, const AugmentationConfig& config, Rng& rng);

// [C,H,W] tensor with pixels / 255. A one-channel image is replicated when
// model_channels is 3 and an RGB image is reduced to luma when it is 1; any
// other mismatch throws ShapeError.
Tensor to_tensor(const ImageBuffer& image, std::size_t model_channels);

}  // namespace pneunet

#endif  // PNEUNET_IMAGE_H_
