#include "pneunet/train.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pneunet/checkpoint.h"
#include "pneunet/error.h"
#include "pneunet/synthetic.h"

namespace pneunet {

namespace fs = std::filesystem;

namespace {

Var batch_loss(Tape& tape, Var probs, const std::vector<int>& labels, const TrainConfig& config) {
  return config.loss == LossKind::kFocal ? focal_loss(tape, probs, labels, config.focal)
                                         : bce_loss(tape, probs, labels);
}

Tensor stack(const std::vector<const Tensor*>& items) {
  const Shape& s = items.front()->shape();
  std::vector<std::size_t> dims{items.size()};
  for (std::size_t d : s.dims()) dims.push_back(d);
  std::vector<float> data;
  data.reserve(items.size() * s.numel());
  for (const Tensor* t : items) data.insert(data.end(), t->data().begin(), t->data().end());
  return Tensor(Shape(dims), std::move(data));
}

// Per-sample backbone outputs, used when the backbone is frozen and inputs
// are not augmented.
std::vector<Tensor> extract_features(const ModelGraph& model, const SampleSource& data,
                                     std::size_t batch_size) {
  std::vector<Tensor> out;
  out.reserve(data.size());
  BatchStream stream(data, {.batch_size = batch_size, .model_channels = model.config().channels});
  Batch batch;
  while (stream.next(batch)) {
    Tape tape;
    ForwardPass pass = model.forward(tape, batch.images, {});
    const Tensor& f = tape.value(pass.features);
    const Shape& s = f.shape();
    const Shape item{s[1], s[2], s[3]};
    const std::size_t stride = item.numel();
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      std::vector<float> v(f.data().begin() + i * stride, f.data().begin() + (i + 1) * stride);
      out.emplace_back(item, std::move(v));
    }
  }
  return out;
}

struct EpochStats {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;

  void add(const Tape& tape, Var loss, Var probs, const std::vector<int>& labels, double threshold) {
    loss_sum += tape.value(loss)[0] * static_cast<double>(labels.size());
    const Tensor& p = tape.value(probs);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      correct += (is_positive(p[i], threshold) ? 1 : 0) == labels[i];
    }
    count += labels.size();
  }
  ValidationResult result() const {
    return {loss_sum / static_cast<double>(count),
            static_cast<double>(correct) / static_cast<double>(count)};
  }
};

ValidationResult evaluate_cached(const ModelGraph& model, const std::vector<Tensor>& features,
                                 const SampleSource& data, const TrainConfig& config) {
  EpochStats stats;
  for (std::size_t begin = 0; begin < features.size(); begin += config.batch_size) {
    const std::size_t end = std::min(features.size(), begin + config.batch_size);
    std::vector<const Tensor*> items;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      items.push_back(&features[i]);
      labels.push_back(data.label(i));
    }
    Tape tape;
    ForwardPass pass = model.forward_from_features(tape, stack(items), {});
    Var loss = batch_loss(tape, pass.probabilities, labels, config);
    stats.add(tape, loss, pass.probabilities, labels, model.config().threshold);
  }
  return stats.result();
}

std::map<std::string, Tensor> collect_grads(const ModelGraph& model, const Tape& tape,
                                            const ForwardPass& pass) {
  std::map<std::string, Tensor> grads;
  for (const std::string& name : model.trainable_names()) {
    auto it = pass.parameters.find(name);
    if (it == pass.parameters.end()) continue;
    if (const Tensor* g = tape.grad(it->second)) grads.emplace(name, *g);
  }
  return grads;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  focal.validate();
  optimizer.validate();
  early_stop.validate();
  augmentation.validate();
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in [0, 1)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["seed"] = seed;
  j["loss"] = to_string(loss);
  j["focal"] = {{"alpha", focal.alpha ? nlohmann::json(*focal.alpha) : nlohmann::json(nullptr)},
                {"gamma", focal.gamma}};
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                    {"rho", optimizer.rho},
                    {"epsilon", optimizer.epsilon}};
  j["early_stop"] = {{"enabled", early_stopping},
                     {"patience", early_stop.patience},
                     {"min_delta", early_stop.min_delta}};
  j["augmentation"] = {{"enabled", augment},
                       {"hflip_prob", augmentation.hflip_prob},
                       {"rotation_max_degrees", augmentation.rotation_max_degrees}};
  j["val_fraction"] = val_fraction;
  j["checkpoint_dir"] = checkpoint_dir ? nlohmann::json(checkpoint_dir->string()) : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("focal")) {
      const auto& f = j.at("focal");
      if (f.contains("alpha")) {
        c.focal.alpha = f.at("alpha").is_null() ? std::nullopt
                                                : std::optional<double>(f.at("alpha").get<double>());
      }
      c.focal.gamma = f.value("gamma", c.focal.gamma);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.rho = o.value("rho", c.optimizer.rho);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
    }
    if (j.contains("early_stop")) {
      const auto& e = j.at("early_stop");
      c.early_stopping = e.value("enabled", c.early_stopping);
      c.early_stop.patience = e.value("patience", c.early_stop.patience);
      c.early_stop.min_delta = e.value("min_delta", c.early_stop.min_delta);
    }
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      c.augment = a.value("enabled", c.augment);
      c.augmentation.hflip_prob = a.value("hflip_prob", c.augmentation.hflip_prob);
      c.augmentation.rotation_max_degrees =
          a.value("rotation_max_degrees", c.augmentation.rotation_max_degrees);
    }
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("checkpoint_dir") && !j.at("checkpoint_dir").is_null()) {
      c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << fmt6(r.train_loss) << ',' << fmt6(r.train_acc) << ','
        << fmt6(r.val_loss) << ',' << fmt6(r.val_acc) << '\n';
  }
  return out.str();
}

void TrainHistory::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv();
  if (!f) throw IoError("failed writing " + path.string());
}

TrainHistory TrainHistory::read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "epoch,train_loss,train_acc,val_loss,val_acc") {
    throw FormatError("unexpected history header in " + path.string());
  }
  TrainHistory h;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char extra;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf%c", &r.epoch, &r.train_loss, &r.train_acc,
                    &r.val_loss, &r.val_acc, &extra) != 5) {
      throw FormatError("malformed history row: " + line);
    }
    h.records.push_back(r);
  }
  return h;
}

bool TrainHistory::same_curves(const TrainHistory& other) const {
  if (records.size() != other.records.size() || best_epoch != other.best_epoch ||
      stopped_early != other.stopped_early) {
    return false;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EpochRecord& a = records[i];
    const EpochRecord& b = other.records[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.train_acc != b.train_acc ||
        a.val_loss != b.val_loss || a.val_acc != b.val_acc) {
      return false;
    }
  }
  return true;
}

ValidationResult evaluate_loss(const ModelGraph& model, const SampleSource& data,
                               const TrainConfig& config) {
  EpochStats stats;
  BatchStream stream(data, {.batch_size = config.batch_size, .model_channels = model.config().channels});
  Batch batch;
  while (stream.next(batch)) {
    Tape tape;
    ForwardPass pass = model.forward(tape, batch.images, {});
    Var loss = batch_loss(tape, pass.probabilities, batch.labels, config);
    stats.add(tape, loss, pass.probabilities, batch.labels, model.config().threshold);
  }
  return stats.result();
}

std::vector<float> predict_source(const ModelGraph& model, const SampleSource& data,
                                  std::size_t batch_size) {
  std::vector<float> out;
  out.reserve(data.size());
  BatchStream stream(data, {.batch_size = batch_size, .model_channels = model.config().channels});
  Batch batch;
  while (stream.next(batch)) {
    const std::vector<float> p = predict_batch(model, batch.images);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TrainHistory train(ModelGraph& model, const SampleSource& train_data, const SampleSource& val_data,
                   const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (!model.has_head()) throw ConfigError("cannot train a backbone-only model");
  if (train_data.size() == 0) throw ConfigError("training split is empty");
  if (!options.validator && val_data.size() == 0) throw ConfigError("validation split is empty");
  if (model.trainable_names().empty()) throw ConfigError("model has no trainable parameters");

  const bool cached = !model.backbone_trainable() && !config.augment;
  std::vector<Tensor> train_features, val_features;
  if (cached) {
    train_features = extract_features(model, train_data, config.batch_size);
    if (!options.validator) val_features = extract_features(model, val_data, config.batch_size);
  }
  const bool bn_train = model.backbone_trainable() && model.config().batchnorm;

  RmsProp optimizer(config.optimizer);
  EarlyStopping stopper(config.early_stop);
  TrainHistory history;
  std::map<std::string, Tensor> best = model.parameters();
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    BatchOptions bo{.batch_size = config.batch_size,
                    .shuffle = true,
                    .seed = config.seed,
                    .epoch = epoch,
                    .model_channels = model.config().channels};
    if (config.augment) bo.augmentation = config.augmentation;
    BatchStream stream(train_data, bo);
    Rng dropout_rng(mix_seed(config.seed, epoch, 0xd509));
    ForwardOptions fo{.mode = Mode::kTrain, .rng = &dropout_rng};
    EpochStats stats;

    auto step = [&](Tape& tape, const ForwardPass& pass, const std::vector<int>& labels) {
      Var loss;
      try {
        loss = batch_loss(tape, pass.probabilities, labels, config);
      } catch (const DomainError& e) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(tape.value(loss)[0])) {
        throw DivergenceError("training loss is not finite in epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      optimizer.step(model, collect_grads(model, tape, pass));
      model.apply_buffer_updates(pass.buffer_updates);
      stats.add(tape, loss, pass.probabilities, labels, model.config().threshold);
    };

    if (cached) {
      const auto& order = stream.order();
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        std::vector<const Tensor*> items;
        std::vector<int> labels;
        for (std::size_t k = begin; k < end; ++k) {
          items.push_back(&train_features[order[k]]);
          labels.push_back(train_data.label(order[k]));
        }
        Tape tape;
        ForwardPass pass;
        try {
          pass = model.forward_from_features(tape, stack(items), fo);
        } catch (const DomainError& e) {
          throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        }
        step(tape, pass, labels);
      }
    } else {
      Batch batch;
      while (stream.next(batch)) {
        if (bn_train && batch.labels.size() < 2) continue;
        Tape tape;
        ForwardPass pass;
        try {
          pass = model.forward(tape, batch.images, fo);
        } catch (const DomainError& e) {
          throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        }
        step(tape, pass, batch.labels);
      }
    }
    if (stats.count == 0) throw ConfigError("no usable training batch");

    const ValidationResult tr = stats.result();
    const ValidationResult va = options.validator ? (*options.validator)(model, epoch)
                                : cached ? evaluate_cached(model, val_features, val_data, config)
                                         : evaluate_loss(model, val_data, config);
    EpochRecord rec{epoch, tr.loss, tr.accuracy, va.loss, va.accuracy,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    history.records.push_back(rec);

    bool stop = false;
    bool improved = va.loss < best_loss;
    if (config.early_stopping) {
      stop = stopper.update(va.loss, epoch);
      improved = stopper.improved();
    }
    if (improved) {
      best_loss = va.loss;
      history.best_epoch = epoch;
      best = model.parameters();
      model.metadata()["epoch"] = epoch;
      model.metadata()["best_val_loss"] = va.loss;
      if (config.checkpoint_dir) {
        fs::create_directories(*config.checkpoint_dir);
        save_checkpoint(model, *config.checkpoint_dir / "best.ckpt");
      }
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (stop) {
      history.stopped_early = true;
      break;
    }
  }

  if (config.early_stopping && history.best_epoch > 0) {
    for (const auto& [name, value] : best) model.mutable_parameter(name) = value;
    model.metadata()["epoch"] = history.best_epoch;
    model.metadata()["best_val_loss"] = best_loss;
  }
  return history;
}

void PretrainConfig::validate() const {
  if (samples < kShapeClasses) throw ConfigError("pretrain needs at least one sample per class");
  if (epochs < 1) throw ConfigError("pretrain epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("pretrain batch_size must be >= 2");
  optimizer.validate();
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"samples", samples},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"optimizer",
           {{"learning_rate", optimizer.learning_rate},
            {"rho", optimizer.rho},
            {"epsilon", optimizer.epsilon}}}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("pretrain config must be a JSON object");
  PretrainConfig c;
  try {
    c.samples = j.value("samples", c.samples);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.rho = o.value("rho", c.optimizer.rho);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pretrain config: ") + e.what());
  }
  c.validate();
  return c;
}

PretrainResult pretrain_backbone(const ModelConfig& model_config, const PretrainConfig& config) {
  config.validate();
  if (model_config.height != model_config.width) {
    throw ConfigError("pretraining uses square inputs");
  }
  PretrainResult result;
  ModelGraph backbone = build_model(model_config, config.seed).backbone_only();
  unfreeze_all(backbone);

  const MemorySource train_set =
      make_shape_dataset(config.samples, model_config.height, mix_seed(config.seed, 1));
  const MemorySource test_set =
      make_shape_dataset(std::max<std::size_t>(config.samples / 4, kShapeClasses),
                         model_config.height, mix_seed(config.seed, 2));

  // Temporary classifier: global average pool -> dense(kShapeClasses).
  Tape probe;
  const std::size_t feat_ch =
      probe.value(backbone.forward(probe, Tensor::zeros(Shape{1, model_config.channels,
                                                              model_config.height,
                                                              model_config.width}),
                                   {}).features)
          .dim(1);
  Rng init_rng(mix_seed(config.seed, 3));
  Tensor head_w = xavier_uniform(Shape{feat_ch, kShapeClasses}, feat_ch, kShapeClasses, init_rng);
  Tensor head_b = Tensor::zeros(Shape{kShapeClasses});

  RmsProp optimizer(config.optimizer);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BatchStream stream(train_set, {.batch_size = config.batch_size,
                                   .shuffle = true,
                                   .seed = config.seed,
                                   .epoch = epoch,
                                   .model_channels = model_config.channels});
    Batch batch;
    double loss_sum = 0.0;
    std::size_t n = 0;
    while (stream.next(batch)) {
      if (batch.labels.size() < 2) continue;
      Tape tape;
      ForwardPass pass = backbone.forward(tape, batch.images, {.mode = Mode::kTrain});
      Var w = tape.variable(head_w), b = tape.variable(head_b);
      Var logits = dense(tape, global_avg_pool(tape, pass.features), w, b);
      Var loss = softmax_cross_entropy(tape, logits, batch.labels);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) throw DivergenceError("pretraining diverged");
      tape.backward(loss);
      optimizer.step(backbone, collect_grads(backbone, tape, pass));
      optimizer.update("pretrain_head.weight", head_w, *tape.grad(w));
      optimizer.update("pretrain_head.bias", head_b, *tape.grad(b));
      backbone.apply_buffer_updates(pass.buffer_updates);
      loss_sum += lv * static_cast<double>(batch.labels.size());
      n += batch.labels.size();
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }

  std::size_t correct = 0;
  BatchStream stream(test_set, {.batch_size = 32, .model_channels = model_config.channels});
  Batch batch;
  while (stream.next(batch)) {
    Tape tape;
    ForwardPass pass = backbone.forward(tape, batch.images, {});
    Var logits = dense(tape, global_avg_pool(tape, pass.features), tape.constant(head_w),
                       tape.constant(head_b));
    const Tensor& z = tape.value(logits);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < kShapeClasses; ++k) {
        if (z[i * kShapeClasses + k] > z[i * kShapeClasses + arg]) arg = k;
      }
      correct += static_cast<int>(arg) == batch.labels[i];
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(test_set.size());
  backbone.metadata()["pretrain_accuracy"] = result.accuracy;
  backbone.metadata()["seed"] = config.seed;
  backbone.metadata()["pretrain"] = config.to_json();
  result.backbone = std::move(backbone);
  return result;
}

}  // namespace pneunet
