#ifndef PNEUNET_SYNTHETIC_H_
#define PNEUNET_SYNTHETIC_H_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pneunet/dataset.h"

namespace pneunet {

// Two-class stand-in for the X-ray task. Every image is 8-bit gray noise
// N(noise_mean, noise_std); positives add a Gaussian blob whose centre lies
// inside one quadrant, at least two sigmas from that quadrant's borders.
struct BlobTaskConfig {
  std::size_t size = 64;
  double noise_mean = 70.0;
  double noise_std = 20.0;
  double blob_amplitude = 120.0;
  double sigma_min = 3.0;
  double sigma_max = 5.0;
  // Probability that a sample is positive.
  double positive_fraction = 0.5;

  void validate() const;
};

// Quadrants are numbered row-major: 0 top-left, 1 top-right, 2 bottom-left,
// 3 bottom-right. Negatives carry quadrant -1.
struct BlobSample {
  ImageBuffer image;
  int label;
  int quadrant;
  double center_x;
  double center_y;
};

BlobSample make_blob_sample(const BlobTaskConfig& config, bool positive, Rng& rng);

struct BlobDataset {
  MemorySource source;
  std::vector<int> quadrants;
};

// Exactly round(n * positive_fraction) positives, placed in a shuffled order.
BlobDataset make_blob_dataset(const BlobTaskConfig& config, std::size_t n, std::uint64_t seed);

// Three-class shape task used to pretrain backbones: 0 circle, 1 bar, 2 cross,
// each drawn at a random position, size and orientation over noise.
inline constexpr std::size_t kShapeClasses = 3;

ImageBuffer make_shape_image(int shape, std::size_t size, Rng& rng);
MemorySource make_shape_dataset(std::size_t n, std::size_t size, std::uint64_t seed);

// Writes root/{train,test,val}/{NORMAL,PNEUMONIA}/NNNNN.pgm.
void write_blob_dataset(const std::filesystem::path& root, const BlobTaskConfig& config,
                        std::size_t n_train, std::size_t n_test, std::size_t n_val,
                        std::uint64_t seed);

}  // namespace pneunet

#endif  // PNEUNET_SYNTHETIC_H_
