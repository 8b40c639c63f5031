#ifndef PNEUNET_TESTS_GRADCHECK_H_
#define PNEUNET_TESTS_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <vector>

#include "pneunet/autograd.h"
#include "pneunet/random.h"

namespace pneunet::testing {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kGradTolerance = 1e-3;

// Random tensor whose entries stay at least `gap` away from zero, so ReLU and
// clamp kinks are never straddled by a finite-difference step.
inline Tensor64 random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                              double gap = 0.0) {
  std::vector<double> v(shape.numel());
  for (double& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < gap);
  }
  return Tensor64(shape, std::move(v));
}

// Entries are a shuffled, well separated ladder (distinct by >= 10 * h), so
// max-pooling never meets a near tie.
inline Tensor64 separated_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(v.size());
  }
  rng.shuffle(std::span<double>(v));
  return Tensor64(shape, std::move(v));
}

struct GradCheckResult {
  // max_i |analytic_i - numeric_i| / max(|numeric|_inf, floor), over all inputs.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose difference quotient changes with the step size, i.e. a
  // ReLU or max-pool kink lies within the step. They are excluded.
  std::size_t skipped = 0;
};

// Compares the 32-bit analytic gradient of L = sum(w * f(inputs)) with a
// central difference evaluated on the 64-bit shadow tape. `f` must be a
// generic callable (auto& tape, const std::vector<Var>&) -> Var.
template <typename F>
GradCheckResult grad_check(F f, const std::vector<Tensor64>& inputs, Rng& rng,
                           double floor = 1e-2, std::vector<bool> differentiate = {}) {
  if (differentiate.empty()) differentiate.assign(inputs.size(), true);

  Shape out_shape{1};
  {
    Tape64 probe;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(probe.constant(t));
    out_shape = probe.shape(f(probe, vars));
  }
  const Tensor64 w = random_tensor(out_shape, rng, 0.5, 1.5);

  auto loss64 = [&](const std::vector<Tensor64>& xs) {
    Tape64 tape;
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    Var out = f(tape, vars);
    return tape.value(sum(tape, mul(tape, out, tape.constant(w))))[0];
  };

  Tape tape;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i].cast<float>();
    vars.push_back(differentiate[i] ? tape.variable(t) : tape.constant(t));
  }
  Var out = f(tape, vars);
  tape.backward(sum(tape, mul(tape, out, tape.constant(w.cast<float>()))));

  GradCheckResult result;
  std::vector<Tensor64> xs = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiate[i]) continue;
    const Tensor* g = tape.grad(vars[i]);
    auto difference = [&](std::size_t j, double h) {
      const double x0 = inputs[i][j];
      xs[i].mutable_data()[j] = x0 + h;
      const double up = loss64(xs);
      xs[i].mutable_data()[j] = x0 - h;
      const double down = loss64(xs);
      xs[i].mutable_data()[j] = x0;
      return (up - down) / (2.0 * h);
    };
    std::vector<double> numeric(inputs[i].size());
    for (std::size_t j = 0; j < numeric.size(); ++j) numeric[j] = difference(j, kFdStep);
    double scale = floor;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double analytic = g ? (*g)[j] : 0.0;
      double err = std::abs(analytic - numeric[j]) / scale;
      if (err > kGradTolerance &&
          std::abs(difference(j, kFdStep / 4) - numeric[j]) / scale > kGradTolerance) {
        ++result.skipped;
        continue;
      }
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace pneunet::testing

#endif  // PNEUNET_TESTS_GRADCHECK_H_
