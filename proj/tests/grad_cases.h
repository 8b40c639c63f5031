#ifndef PNEUNET_TESTS_GRAD_CASES_H_
#define PNEUNET_TESTS_GRAD_CASES_H_

#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "gradcheck.h"
#include "pneunet/layers.h"
#include "pneunet/losses.h"

namespace pneunet::testing {

inline constexpr int kGradCases = 100;

struct GradSummary {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool ok() const { return worst <= kGradTolerance && skipped * 100 <= checked; }
};

// One named layer under test; run() checks kGradCases seeded random cases.
struct GradCase {
  std::string name;
  std::function<GradSummary()> run;
};

template <typename F, typename Make>
GradSummary run_grad_cases(F f, Make make, std::uint64_t seed) {
  Rng rng(seed);
  GradSummary s;
  for (int c = 0; c < kGradCases; ++c) {
    const std::vector<Tensor64> inputs = make(rng);
    const GradCheckResult r = grad_check(f, inputs, rng);
    s.worst = std::max(s.worst, r.max_rel_error);
    s.checked += r.checked;
    s.skipped += r.skipped;
  }
  return s;
}

#define PNEUNET_TAPE_T(t) typename std::remove_reference_t<decltype(t.value(Var{}))>::value_type

inline std::vector<GradCase> layer_grad_cases() {
  std::vector<GradCase> cases;
  auto add = [&](std::string name, auto f, auto make, std::uint64_t seed) {
    cases.push_back({std::move(name), [=] { return run_grad_cases(f, make, seed); }});
  };

  auto conv_inputs = [](Rng& rng) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), o = 1 + rng.below(3);
    const std::size_t h = 3 + rng.below(3), w = 3 + rng.below(3);
    return std::vector<Tensor64>{random_tensor(Shape{n, c, h, w}, rng),
                                 random_tensor(Shape{o, c, 3, 3}, rng), random_tensor(Shape{o}, rng)};
  };
  add("conv2d stride 1 pad 1",
      [](auto& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, 1); }, conv_inputs, 101);
  add("conv2d stride 2 pad 0",
      [](auto& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 2, 0); }, conv_inputs, 102);

  add("maxpool2d", [](auto& t, const std::vector<Var>& v) { return maxpool2d(t, v[0], 2, 2); },
      [](Rng& rng) {
        return std::vector<Tensor64>{separated_tensor(
            Shape{1 + rng.below(2), 1 + rng.below(3), 2 + 2 * rng.below(3), 2 + 2 * rng.below(3)}, rng)};
      },
      103);

  auto nchw = [](Rng& rng) {
    return std::vector<Tensor64>{
        random_tensor(Shape{1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)}, rng)};
  };
  add("global_avg_pool", [](auto& t, const std::vector<Var>& v) { return global_avg_pool(t, v[0]); }, nchw, 104);
  add("flatten", [](auto& t, const std::vector<Var>& v) { return flatten(t, v[0]); }, nchw, 105);

  add("dense", [](auto& t, const std::vector<Var>& v) { return dense(t, v[0], v[1], v[2]); },
      [](Rng& rng) {
        const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(6), u = 1 + rng.below(5);
        return std::vector<Tensor64>{random_tensor(Shape{n, d}, rng), random_tensor(Shape{d, u}, rng),
                                     random_tensor(Shape{u}, rng)};
      },
      106);

  auto away_from_zero = [](Rng& rng) {
    return std::vector<Tensor64>{random_tensor(Shape{1 + rng.below(4), 1 + rng.below(6)}, rng, -3, 3, 0.01)};
  };
  add("relu", [](auto& t, const std::vector<Var>& v) { return relu(t, v[0]); }, away_from_zero, 107);
  add("sigmoid", [](auto& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); }, away_from_zero, 108);

  Rng mask_rng(5);
  const Tensor64 mask = dropout_mask<double>(Shape{4, 6}, 0.5, mask_rng);
  add("dropout",
      [mask](auto& t, const std::vector<Var>& v) {
        return dropout_with_mask(t, v[0], mask.template cast<PNEUNET_TAPE_T(t)>());
      },
      [](Rng& rng) { return std::vector<Tensor64>{random_tensor(Shape{4, 6}, rng)}; }, 109);

  add("batchnorm (train mode)",
      [](auto& t, const std::vector<Var>& v) {
        using T = PNEUNET_TAPE_T(t);
        // Running statistics do not enter the train-mode output.
        static const BasicTensor<T> m = BasicTensor<T>::zeros(Shape{3});
        static const BasicTensor<T> s = BasicTensor<T>::full(Shape{3}, T{1});
        return batchnorm(t, v[0], BatchNormParams<T>{v[1], v[2], &m, &s}, Mode::kTrain);
      },
      [](Rng& rng) {
        return std::vector<Tensor64>{random_tensor(Shape{2 + rng.below(3), 3, 2, 2}, rng, -2, 2),
                                     random_tensor(Shape{3}, rng, 0.5, 1.5), random_tensor(Shape{3}, rng)};
      },
      110);

  add("residual_block (projection, batchnorm)",
      [](auto& t, const std::vector<Var>& v) {
        using T = PNEUNET_TAPE_T(t);
        static const BasicTensor<T> m = BasicTensor<T>::zeros(Shape{3});
        static const BasicTensor<T> s = BasicTensor<T>::full(Shape{3}, T{1});
        ResidualBlockParams<T> p;
        p.stride = 2;
        p.conv1_weight = v[1];
        p.conv1_bias = v[2];
        p.conv2_weight = v[3];
        p.conv2_bias = v[4];
        p.proj_weight = v[5];
        p.proj_bias = v[6];
        p.bn1 = BatchNormParams<T>{v[7], v[8], &m, &s};
        p.bn2 = BatchNormParams<T>{v[9], v[10], &m, &s};
        return residual_block(t, v[0], p, Mode::kTrain);
      },
      [](Rng& rng) {
        return std::vector<Tensor64>{
            random_tensor(Shape{2, 2, 4, 4}, rng),
            random_tensor(Shape{3, 2, 3, 3}, rng),   random_tensor(Shape{3}, rng),
            random_tensor(Shape{3, 3, 3, 3}, rng),   random_tensor(Shape{3}, rng),
            random_tensor(Shape{3, 2, 1, 1}, rng),   random_tensor(Shape{3}, rng),
            random_tensor(Shape{3}, rng, 0.5, 1.5),  random_tensor(Shape{3}, rng),
            random_tensor(Shape{3}, rng, 0.5, 1.5),  random_tensor(Shape{3}, rng)};
      },
      111);

  add("residual_block (identity)",
      [](auto& t, const std::vector<Var>& v) {
        ResidualBlockParams<PNEUNET_TAPE_T(t)> p;
        p.conv1_weight = v[1];
        p.conv1_bias = v[2];
        p.conv2_weight = v[3];
        p.conv2_bias = v[4];
        return residual_block(t, v[0], p, Mode::kEval);
      },
      [](Rng& rng) {
        return std::vector<Tensor64>{random_tensor(Shape{1, 2, 4, 4}, rng),
                                     random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2}, rng),
                                     random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2}, rng)};
      },
      112);

  add("softmax_cross_entropy",
      [](auto& t, const std::vector<Var>& v) { return softmax_cross_entropy(t, v[0], {0, 2, 1, 2}); },
      [](Rng& rng) { return std::vector<Tensor64>{random_tensor(Shape{4, 3}, rng, -3, 3)}; }, 113);

  const std::vector<int> labels{1, 0, 0, 1, 1, 0};
  add("focal_loss",
      [labels](auto& t, const std::vector<Var>& v) { return focal_loss(t, v[0], labels, FocalLossParams{}); },
      [](Rng& rng) { return std::vector<Tensor64>{random_tensor(Shape{6, 1}, rng, 0.02, 0.98)}; }, 114);
  add("bce_loss", [labels](auto& t, const std::vector<Var>& v) { return bce_loss(t, v[0], labels); },
      [](Rng& rng) { return std::vector<Tensor64>{random_tensor(Shape{6, 1}, rng, 0.02, 0.98)}; }, 115);
  return cases;
}

#undef PNEUNET_TAPE_T

}  // namespace pneunet::testing

#endif  // PNEUNET_TESTS_GRAD_CASES_H_
