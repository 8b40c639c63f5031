#ifndef PNEUNET_TRAIN_H_
#define PNEUNET_TRAIN_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pneunet/dataset.h"
#include "pneunet/losses.h"
#include "pneunet/model.h"
#include "pneunet/optim.h"

namespace pneunet {

// JSON keys mirror the field names; "focal" holds {alpha (null = balancing
// off), gamma}, "optimizer" {learning_rate, rho, epsilon}, "early_stop"
// {enabled, patience, min_delta}, "augmentation" {enabled, hflip_prob,
// rotation_max_degrees}.
struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kFocal;
  FocalLossParams focal;
  RmsPropParams optimizer;
  bool early_stopping = true;
  EarlyStopParams early_stop;
  bool augment = true;
  AugmentationConfig augmentation;
  // Share of the training split held out for validation; 0 uses the
  // dataset's own val folder.
  double val_fraction = 0.1;
  // best.ckpt is written here whenever validation loss improves.
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  // "epoch,train_loss,train_acc,val_loss,val_acc" with 6 decimals.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static TrainHistory read_csv(const std::filesystem::path& path);

  // Compares everything except wall time.
  bool same_curves(const TrainHistory& other) const;
};

struct ValidationResult {
  double loss;
  double accuracy;
};

// Replaces the built-in validation pass; called once per epoch with the
// current weights.
using Validator = std::function<ValidationResult(const ModelGraph& model, std::size_t epoch)>;

// Per-epoch progress callback.
using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainOptions {
  std::optional<Validator> validator;
  EpochCallback on_epoch;
};

// Trains the model's trainable parameters in place and, with early stopping
// on, leaves it holding the best-validation weights. When the backbone is
// frozen and augmentation is off, backbone features are computed once and
// reused. Throws DivergenceError when the training loss stops being finite.
TrainHistory train(ModelGraph& model, const SampleSource& train_data, const SampleSource& val_data,
                   const TrainConfig& config, const TrainOptions& options = {});

// Mean loss and accuracy of the eval-mode model over a source.
ValidationResult evaluate_loss(const ModelGraph& model, const SampleSource& data,
                               const TrainConfig& config);

// Eval-mode probabilities for every sample, in source order.
std::vector<float> predict_source(const ModelGraph& model, const SampleSource& data,
                                  std::size_t batch_size = 32);

struct PretrainConfig {
  std::size_t samples = 900;
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  RmsPropParams optimizer;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainResult {
  ModelGraph backbone;
  // Accuracy of the backbone plus temporary head on a held-out draw of the
  // shape task.
  double accuracy = 0.0;
  std::vector<double> epoch_losses;
};

// Trains a backbone with a temporary three-way shape classifier on the
// synthetic shape task and returns the backbone alone.
PretrainResult pretrain_backbone(const ModelConfig& model_config, const PretrainConfig& config);

}  // namespace pneunet

#endif  // PNEUNET_TRAIN_H_
