#include "pneunet/dataset.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "pneunet/error.h"
#include "pneunet/random.h"

namespace pneunet {

namespace fs = std::filesystem;

namespace {

bool supported_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpeg" || ext == ".jpg" || ext == ".png" || ext == ".pgm";
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

const std::vector<DatasetEntry>& DatasetIndex::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset has no split '" + name + "'");
  return it->second;
}

std::size_t DatasetIndex::count(const std::string& split_name) const {
  return split(split_name).size();
}

std::size_t DatasetIndex::count(const std::string& split_name, int label) const {
  const auto& s = split(split_name);
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [label](const DatasetEntry& e) { return e.label == label; }));
}

nlohmann::json DatasetIndex::summary() const {
  nlohmann::json j;
  j["root"] = root.string();
  for (const auto& [name, entries] : splits) {
    j["splits"][name] = {{"total", entries.size()},
                         {kClassNames[0], count(name, kNormalLabel)},
                         {kClassNames[1], count(name, kPneumoniaLabel)}};
  }
  j["warnings"] = warnings;
  return j;
}

DatasetIndex scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root not found: " + root.string());
  DatasetIndex index;
  index.root = root;

  const std::set<std::string> known_splits(std::begin(kSplitNames), std::end(kSplitNames));
  for (const auto& dir : fs::directory_iterator(root)) {
    const std::string name = dir.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    if (dir.is_directory() && !known_splits.count(name)) {
      throw FormatError("unknown dataset folder '" + name + "' under " + root.string());
    }
  }

  for (const char* split : kSplitNames) {
    const fs::path split_dir = root / split;
    if (!fs::is_directory(split_dir, ec)) {
      throw IoError("dataset split folder missing: " + split_dir.string());
    }
    for (const auto& dir : fs::directory_iterator(split_dir)) {
      const std::string name = dir.path().filename().string();
      if (name.empty() || name[0] == '.') continue;
      if (dir.is_directory() && name != kClassNames[0] && name != kClassNames[1]) {
        throw FormatError("unknown class folder '" + name + "' under " + split_dir.string());
      }
    }
    auto& entries = index.splits[split];
    for (int label : {kNormalLabel, kPneumoniaLabel}) {
      const fs::path class_dir = split_dir / kClassNames[label];
      if (!fs::is_directory(class_dir, ec)) {
        index.warnings.push_back("missing class folder " + class_dir.string());
        continue;
      }
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(class_dir)) {
        const std::string name = f.path().filename().string();
        if (name.empty() || name[0] == '.') continue;
        if (!f.is_regular_file(ec)) {
          throw IoError("unreadable dataset entry " + f.path().string());
        }
        if (supported_extension(f.path())) files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) index.warnings.push_back("empty class folder " + class_dir.string());
      for (auto& p : files) entries.push_back({std::move(p), label});
    }
  }
  return index;
}

MemorySource::MemorySource(std::vector<ImageBuffer> images, std::vector<int> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.size() != labels_.size()) throw ShapeError("images and labels differ in length");
}

void MemorySource::add(ImageBuffer image, int label) {
  images_.push_back(std::move(image));
  labels_.push_back(label);
}

FileSource::FileSource(std::vector<DatasetEntry> entries, std::size_t width, std::size_t height)
    : entries_(std::move(entries)), width_(width), height_(height) {}

ImageBuffer FileSource::image(std::size_t i) const {
  return resize_bilinear(read_image(entries_.at(i).path), width_, height_);
}

SubsetSource::SubsetSource(const SampleSource& base, std::vector<std::size_t> indices)
    : base_(base), indices_(std::move(indices)) {
  for (std::size_t i : indices_) {
    if (i >= base_.size()) throw ShapeError("subset index out of range");
  }
}

MemorySource load_into_memory(const SampleSource& source) {
  const std::size_t n = source.size();
  std::vector<ImageBuffer> images(n);
  std::vector<int> labels(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      images[i] = source.image(i);
      labels[i] = source.label(i);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return MemorySource(std::move(images), std::move(labels));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(
    std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x7661'6c00));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

BatchStream::BatchStream(const SampleSource& source, BatchOptions options)
    : source_(source), options_(std::move(options)) {
  if (options_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (source_.size() == 0) throw ConfigError("cannot batch an empty split");
  if (options_.augmentation) options_.augmentation->validate();
  order_.resize(source_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (options_.shuffle) {
    Rng rng(mix_seed(options_.seed, options_.epoch));
    rng.shuffle(std::span<std::size_t>(order_));
  }
}

std::size_t BatchStream::num_batches() const {
  return (order_.size() + options_.batch_size - 1) / options_.batch_size;
}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + options_.batch_size);
  const std::size_t n = end - cursor_;
  batch.indices.assign(order_.begin() + cursor_, order_.begin() + end);
  batch.labels.resize(n);
  std::vector<Tensor> items(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < static_cast<long>(n); ++k) {
    try {
      const std::size_t idx = batch.indices[k];
      ImageBuffer img = source_.image(idx);
      if (options_.augmentation) {
        Rng rng(mix_seed(options_.seed, options_.epoch + 1, idx + 1));
        img = augment(img, *options_.augmentation, rng);
      }
      items[k] = to_tensor(img, options_.model_channels);
      batch.labels[k] = source_.label(idx);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  const Shape& s = items[0].shape();
  std::vector<float> data;
  data.reserve(n * s.numel());
  for (const Tensor& t : items) {
    if (t.shape() != s) throw ShapeError("batch images differ in size");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  batch.images = Tensor(Shape{n, s[0], s[1], s[2]}, std::move(data));
  cursor_ = end;
  return true;
}

}  // namespace pneunet
