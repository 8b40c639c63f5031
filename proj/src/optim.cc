#include "pneunet/optim.h"

#include <cmath>

#include "pneunet/error.h"

namespace pneunet {

void RmsPropParams::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must be in [0, 1)");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
}

RmsProp::RmsProp(RmsPropParams params) : params_(params) { params_.validate(); }

void RmsProp::update(const std::string& name, Tensor& param, const Tensor& grad) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("gradient shape " + grad.shape().str() + " does not match parameter '" +
                     name + "' " + param.shape().str());
  }
  auto it = v_.find(name);
  if (it == v_.end()) it = v_.emplace(name, Tensor64::zeros(param.shape())).first;
  auto v = it->second.mutable_data();
  auto theta = param.mutable_data();
  auto g = grad.data();
  const double rho = params_.rho, lr = params_.learning_rate, eps = params_.epsilon;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = g[i];
    v[i] = rho * v[i] + (1.0 - rho) * gi * gi;
    if (gi != 0.0) {
      theta[i] = static_cast<float>(theta[i] - lr * gi / (std::sqrt(v[i]) + eps));
    }
  }
}

void RmsProp::step(ModelGraph& model, const std::map<std::string, Tensor>& grads) {
  for (const std::string& name : model.trainable_names()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ConfigError("no gradient for trainable parameter '" + name + "'");
    update(name, model.mutable_parameter(name), it->second);
  }
}

void EarlyStopParams::validate() const {
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
}

EarlyStopping::EarlyStopping(EarlyStopParams params) : params_(params) { params_.validate(); }

bool EarlyStopping::update(double val_loss, std::size_t epoch) {
  if (!std::isfinite(val_loss)) throw DomainError("validation loss is not finite");
  improved_ = val_loss < best_loss_ - params_.min_delta;
  if (improved_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return false;
  }
  if (wait_ >= params_.patience) return true;
  ++wait_;
  return wait_ == params_.patience;
}

}  // namespace pneunet
