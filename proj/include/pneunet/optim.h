#ifndef PNEUNET_OPTIM_H_
#define PNEUNET_OPTIM_H_

#include <cstddef>
#include <limits>
#include <map>
#include <string>

#include "json.hpp"
#include "pneunet/model.h"

namespace pneunet {

struct RmsPropParams {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-7;

  void validate() const;
  friend bool operator==(const RmsPropParams&, const RmsPropParams&) = default;
};

// v <- rho*v + (1-rho)*g^2 ; theta <- theta - lr*g/(sqrt(v) + eps)
// Accumulators are created lazily, zero-initialised, for trainable parameters
// only. Arithmetic is carried out in double and rounded once per element.
class RmsProp {
 public:
  explicit RmsProp(RmsPropParams params = {});

  // Throws ConfigError when a trainable parameter has no gradient and
  // ShapeError on a shape mismatch. Gradients for frozen parameters are
  // ignored.
  void step(ModelGraph& model, const std::map<std::string, Tensor>& grads);

  // Single-tensor form used by step().
  void update(const std::string& name, Tensor& param, const Tensor& grad);

  const std::map<std::string, Tensor64>& accumulators() const { return v_; }
  const RmsPropParams& params() const { return params_; }

 private:
  RmsPropParams params_;
  std::map<std::string, Tensor64> v_;
};

struct EarlyStopParams {
  std::size_t patience = 5;
  double min_delta = 1e-4;

  void validate() const;
  friend bool operator==(const EarlyStopParams&, const EarlyStopParams&) = default;
};

// Monitors validation loss. An epoch improves when loss < best - min_delta.
// Epochs are numbered from 1.
class EarlyStopping {
 public:
  explicit EarlyStopping(EarlyStopParams params = {});

  // Returns true when training should stop after this epoch. Throws
  // DomainError on a non-finite loss.
  bool update(double val_loss, std::size_t epoch);
  bool improved() const { return improved_; }

  double best_loss() const { return best_loss_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t wait() const { return wait_; }

 private:
  EarlyStopParams params_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t wait_ = 0;
  bool improved_ = false;
};

}  // namespace pneunet

#endif  // PNEUNET_OPTIM_H_
