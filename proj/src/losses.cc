#include "pneunet/losses.h"

#include <algorithm>
#include <cmath>

#include "pneunet/error.h"

namespace pneunet {

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw ConfigError("binary loss: label must be 0 or 1, got " + std::to_string(label));
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

template <typename T>
void check_batch(const BasicTape<T>& tape, Var probs, const std::vector<int>& labels) {
  const Shape& s = tape.shape(probs);
  if (s.numel() != labels.size() || s[0] != labels.size()) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for predictions " +
                     s.str());
  }
  for (int y : labels) check_label(y);
}

// p_t = y * p + (1 - y) * (1 - p), built from taped ops over a clamped p.
template <typename T>
Var prob_of_truth(BasicTape<T>& tape, Var p, const std::vector<int>& labels) {
  const Shape& s = tape.shape(p);
  auto y = BasicTensor<T>::zeros(s);
  auto not_y = BasicTensor<T>::zeros(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = static_cast<T>(labels[i]);
    not_y[i] = T{1} - y[i];
  }
  Var one_minus_p = add_scalar(tape, neg(tape, p), 1.0);
  return add(tape, mul(tape, p, tape.constant(std::move(y))),
             mul(tape, one_minus_p, tape.constant(std::move(not_y))));
}

}  // namespace

void FocalLossParams::validate() const {
  if (alpha && !(*alpha >= 0.0 && *alpha <= 1.0)) {
    throw ConfigError("focal loss: alpha must be in [0, 1]");
  }
  if (!(gamma >= 0.0)) throw ConfigError("focal loss: gamma must be >= 0");
}

std::string to_string(LossKind kind) { return kind == LossKind::kFocal ? "focal" : "bce"; }

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "focal") return LossKind::kFocal;
  if (name == "bce") return LossKind::kBce;
  throw ConfigError("unknown loss '" + name + "' (expected focal or bce)");
}

double focal_loss_value(double p, int label, const FocalLossParams& params) {
  check_label(label);
  params.validate();
  const double pc = clamp_prob(p);
  const double pt = label == 1 ? pc : 1.0 - pc;
  const double at = params.alpha ? (label == 1 ? *params.alpha : 1.0 - *params.alpha) : 1.0;
  return -at * std::pow(1.0 - pt, params.gamma) * std::log(pt);
}

double bce_loss_value(double p, int label) {
  check_label(label);
  const double pc = clamp_prob(p);
  const double y = label;
  return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

template <typename T>
Var focal_loss(BasicTape<T>& tape, Var probs, const std::vector<int>& labels,
               const FocalLossParams& params) {
  params.validate();
  check_batch(tape, probs, labels);
  Var p = clamp(tape, probs, kProbEpsilon, 1.0 - kProbEpsilon);
  Var pt = prob_of_truth(tape, p, labels);
  Var modulator = pow_scalar(tape, add_scalar(tape, neg(tape, pt), 1.0), params.gamma);
  Var per_sample = mul(tape, modulator, log(tape, pt));
  if (params.alpha) {
    auto at = BasicTensor<T>::zeros(tape.shape(probs));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      at[i] = static_cast<T>(labels[i] == 1 ? *params.alpha : 1.0 - *params.alpha);
    }
    per_sample = mul(tape, per_sample, tape.constant(std::move(at)));
  }
  return neg(tape, mean(tape, per_sample));
}

template <typename T>
Var bce_loss(BasicTape<T>& tape, Var probs, const std::vector<int>& labels) {
  check_batch(tape, probs, labels);
  Var p = clamp(tape, probs, kProbEpsilon, 1.0 - kProbEpsilon);
  return neg(tape, mean(tape, log(tape, prob_of_truth(tape, p, labels))));
}

template Var focal_loss<float>(BasicTape<float>&, Var, const std::vector<int>&,
                               const FocalLossParams&);
template Var focal_loss<double>(BasicTape<double>&, Var, const std::vector<int>&,
                                const FocalLossParams&);
template Var bce_loss<float>(BasicTape<float>&, Var, const std::vector<int>&);
template Var bce_loss<double>(BasicTape<double>&, Var, const std::vector<int>&);

}  // namespace pneunet
