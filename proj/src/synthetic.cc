#include "pneunet/synthetic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pneunet/error.h"
#include "pneunet/random.h"

namespace pneunet {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::vector<double> noise_field(std::size_t size, double mean, double stddev, Rng& rng) {
  std::vector<double> field(size * size);
  for (double& v : field) v = mean + stddev * rng.normal();
  return field;
}

ImageBuffer quantize(const std::vector<double>& field, std::size_t size) {
  ImageBuffer img(size, size, 1);
  for (std::size_t i = 0; i < field.size(); ++i) img.pixels[i] = to_pixel(field[i]);
  return img;
}

}  // namespace

void BlobTaskConfig::validate() const {
  if (size < 8 || size % 2 != 0) throw ConfigError("blob task size must be even and >= 8");
  if (!(sigma_min > 0.0 && sigma_max >= sigma_min)) throw ConfigError("invalid blob sigma range");
  if (4.0 * sigma_max >= static_cast<double>(size) / 2.0) {
    throw ConfigError("blob sigma too large for the quadrant");
  }
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("positive_fraction must be in [0, 1]");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
}

BlobSample make_blob_sample(const BlobTaskConfig& config, bool positive, Rng& rng) {
  const std::size_t n = config.size;
  std::vector<double> field = noise_field(n, config.noise_mean, config.noise_std, rng);
  BlobSample s{{}, positive ? kPneumoniaLabel : kNormalLabel, -1, 0.0, 0.0};
  if (positive) {
    const double half = static_cast<double>(n) / 2.0;
    const double sigma = rng.uniform(config.sigma_min, config.sigma_max);
    s.quadrant = static_cast<int>(rng.below(4));
    const double x0 = (s.quadrant % 2) * half;
    const double y0 = (s.quadrant / 2) * half;
    const double margin = 2.0 * sigma;
    s.center_x = x0 + rng.uniform(margin, half - 1.0 - margin);
    s.center_y = y0 + rng.uniform(margin, half - 1.0 - margin);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = static_cast<double>(x) - s.center_x;
        const double dy = static_cast<double>(y) - s.center_y;
        field[y * n + x] += config.blob_amplitude * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
    }
  }
  s.image = quantize(field, n);
  return s;
}

BlobDataset make_blob_dataset(const BlobTaskConfig& config, std::size_t n, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto n_pos = static_cast<std::size_t>(std::llround(config.positive_fraction * static_cast<double>(n)));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  rng.shuffle(std::span<int>(labels));
  BlobDataset out;
  for (std::size_t i = 0; i < n; ++i) {
    BlobSample s = make_blob_sample(config, labels[i] == 1, rng);
    out.quadrants.push_back(s.quadrant);
    out.source.add(std::move(s.image), s.label);
  }
  return out;
}

ImageBuffer make_shape_image(int shape, std::size_t size, Rng& rng) {
  std::vector<double> field = noise_field(size, 70.0, 20.0, rng);
  const double n = static_cast<double>(size);
  const double cx = rng.uniform(0.3 * n, 0.7 * n);
  const double cy = rng.uniform(0.3 * n, 0.7 * n);
  const double radius = rng.uniform(0.12 * n, 0.22 * n);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double c = std::cos(angle), s = std::sin(angle);
  const double thickness = 0.04 * n;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      bool on = false;
      switch (shape) {
        case 0:
          on = std::abs(std::hypot(dx, dy) - radius) <= thickness;
          break;
        case 1:
          on = std::abs(u) <= radius && std::abs(v) <= thickness;
          break;
        case 2:
          on = (std::abs(u) <= radius && std::abs(v) <= thickness) ||
               (std::abs(v) <= radius && std::abs(u) <= thickness);
          break;
        default:
          throw ConfigError("unknown shape class " + std::to_string(shape));
      }
      if (on) field[y * size + x] += 110.0;
    }
  }
  return quantize(field, size);
}

MemorySource make_shape_dataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  MemorySource out;
  for (std::size_t i = 0; i < n; ++i) {
    const int shape = static_cast<int>(i % kShapeClasses);
    out.add(make_shape_image(shape, size, rng), shape);
  }
  return out;
}

void write_blob_dataset(const fs::path& root, const BlobTaskConfig& config, std::size_t n_train,
                        std::size_t n_test, std::size_t n_val, std::uint64_t seed) {
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", n_train}, {"test", n_test}, {"val", n_val}};
  std::uint64_t stream = 0;
  for (const auto& [split, n] : splits) {
    for (const char* cls : kClassNames) fs::create_directories(root / split / cls);
    BlobDataset data = make_blob_dataset(config, n, mix_seed(seed, ++stream));
    for (std::size_t i = 0; i < n; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%05zu.pgm", i);
      write_image(root / split / kClassNames[data.source.label(i)] / name, data.source.image(i));
    }
  }
}

}  // namespace pneunet
