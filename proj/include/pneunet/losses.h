#ifndef PNEUNET_LOSSES_H_
#define PNEUNET_LOSSES_H_

#include <optional>
#include <string>
#include <vector>

#include "pneunet/autograd.h"

namespace pneunet {

// Focal loss for a sigmoid output. With p_t = p for y=1 and 1-p for y=0:
//   loss = -alpha_t * (1 - p_t)^gamma * log(p_t)
// alpha_t = alpha for y=1 and 1-alpha for y=0; an empty alpha disables class
// balancing (alpha_t = 1). gamma = 0 without balancing is plain BCE.
struct FocalLossParams {
  std::optional<double> alpha = 0.25;
  double gamma = 2.0;

  void validate() const;
};

enum class LossKind { kFocal, kBce };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// Scalar evaluations in double precision; p is clamped to
// [kProbEpsilon, 1 - kProbEpsilon]. Labels outside {0,1} throw ConfigError.
double focal_loss_value(double p, int label, const FocalLossParams& params);
double bce_loss_value(double p, int label);

// Mean loss over a batch of probabilities shaped [N] or [N,1].
template <typename T>
Var focal_loss(BasicTape<T>& tape, Var probs, const std::vector<int>& labels,
               const FocalLossParams& params);

template <typename T>
Var bce_loss(BasicTape<T>& tape, Var probs, const std::vector<int>& labels);

}  // namespace pneunet

#endif  // PNEUNET_LOSSES_H_
