#ifndef PNEUNET_DATASET_H_
#define PNEUNET_DATASET_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pneunet/image.h"
#include "pneunet/tensor.h"

namespace pneunet {

inline constexpr int kNormalLabel = 0;
inline constexpr int kPneumoniaLabel = 1;

inline constexpr const char* kSplitNames[] = {"train", "test", "val"};
inline constexpr const char* kClassNames[] = {"NORMAL", "PNEUMONIA"};

struct DatasetEntry {
  std::filesystem::path path;
  int label;
};

// root/{train,test,val}/{NORMAL,PNEUMONIA}/*.{jpeg,jpg,png,pgm}, files in
// lexicographic order within each class folder, NORMAL before PNEUMONIA.
struct DatasetIndex {
  std::filesystem::path root;
  std::map<std::string, std::vector<DatasetEntry>> splits;
  std::vector<std::string> warnings;

  const std::vector<DatasetEntry>& split(const std::string& name) const;
  std::size_t count(const std::string& split_name) const;
  std::size_t count(const std::string& split_name, int label) const;

  // {"root", "splits": {split: {"total", "NORMAL", "PNEUMONIA"}}, "warnings"}
  nlohmann::json summary() const;
};

// Throws IoError for a missing root or split folder and FormatError for an
// unknown sub-folder. Empty or missing class folders produce a warning and a
// zero count.
DatasetIndex scan_dataset(const std::filesystem::path& root);

// Random-access labelled images at the model's spatial resolution.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual ImageBuffer image(std::size_t i) const = 0;
};

class MemorySource : public SampleSource {
 public:
  MemorySource() = default;
  MemorySource(std::vector<ImageBuffer> images, std::vector<int> labels);

  std::size_t size() const override { return images_.size(); }
  int label(std::size_t i) const override { return labels_.at(i); }
  ImageBuffer image(std::size_t i) const override { return images_.at(i); }

  void add(ImageBuffer image, int label);
  const std::vector<int>& labels() const { return labels_; }

 private:
  std::vector<ImageBuffer> images_;
  std::vector<int> labels_;
};

// Decodes files on demand and resizes them to width x height.
class FileSource : public SampleSource {
 public:
  FileSource(std::vector<DatasetEntry> entries, std::size_t width, std::size_t height);

  std::size_t size() const override { return entries_.size(); }
  int label(std::size_t i) const override { return entries_.at(i).label; }
  ImageBuffer image(std::size_t i) const override;
  const DatasetEntry& entry(std::size_t i) const { return entries_.at(i); }

 private:
  std::vector<DatasetEntry> entries_;
  std::size_t width_;
  std::size_t height_;
};

// View onto selected indices of another source, which must outlive it.
class SubsetSource : public SampleSource {
 public:
  SubsetSource(const SampleSource& base, std::vector<std::size_t> indices);

  std::size_t size() const override { return indices_.size(); }
  int label(std::size_t i) const override { return base_.label(indices_.at(i)); }
  ImageBuffer image(std::size_t i) const override { return base_.image(indices_.at(i)); }

 private:
  const SampleSource& base_;
  std::vector<std::size_t> indices_;
};

// Decodes every sample once (in parallel) into memory, preserving order.
MemorySource load_into_memory(const SampleSource& source);

// Seeded holdout: returns (train indices, validation indices); validation
// receives round(fraction * n) samples, both lists ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(
    std::size_t n, double fraction, std::uint64_t seed);

struct Batch {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

struct BatchOptions {
  std::size_t batch_size = 16;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::optional<AugmentationConfig> augmentation;
  std::size_t model_channels = 3;
};

// One epoch of batches. With shuffle on, the order is a Fisher-Yates
// permutation from Rng(mix_seed(seed, epoch)); each sample's augmentation draws
// come from Rng(mix_seed(seed, epoch, index)), so the schedule does not depend on
// how decoding is scheduled. The last batch may be partial.
class BatchStream {
 public:
  BatchStream(const SampleSource& source, BatchOptions options);

  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }
  bool next(Batch& batch);

 private:
  const SampleSource& source_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// SplitMix64-style mixing of a seed with stream coordinates.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace pneunet

#endif  // PNEUNET_DATASET_H_
