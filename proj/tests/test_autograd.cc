#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.h"
#include "pneunet/autograd.h"
#include "pneunet/error.h"

using namespace pneunet;
using namespace pneunet::testing;

namespace {

constexpr int kCases = 100;

template <typename F>
void check_op(const char* name, F f, std::function<std::vector<Tensor64>(Rng&)> make_inputs,
              std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < kCases; ++c) {
    const auto inputs = make_inputs(rng);
    const GradCheckResult r = grad_check(f, inputs, rng);
    worst = std::max(worst, r.max_rel_error);
    ASSERT_EQ(r.skipped, 0u) << name << " case " << c;
  }
  EXPECT_LE(worst, kGradTolerance) << name;
}

Shape random_shape(Rng& rng) {
  return Shape{1 + rng.below(4), 1 + rng.below(4)};
}

}  // namespace

TEST(Tape, ForwardValuesOfBasicOps) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{3}, {1, 2, 3}));
  Var b = tape.constant(Tensor(Shape{3}, {4, 5, 6}));
  EXPECT_EQ(tape.value(add(tape, a, b)).vec(), (std::vector<float>{5, 7, 9}));
  EXPECT_EQ(tape.value(sub(tape, a, b)).vec(), (std::vector<float>{-3, -3, -3}));
  EXPECT_EQ(tape.value(mul(tape, a, b)).vec(), (std::vector<float>{4, 10, 18}));
  EXPECT_EQ(tape.value(sum(tape, a))[0], 6.0f);
  EXPECT_EQ(tape.value(mean(tape, b))[0], 5.0f);
  EXPECT_EQ(tape.value(select(tape, b, 2))[0], 6.0f);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros(Shape{3}));
  Var b = tape.constant(Tensor::zeros(Shape{2}));
  EXPECT_THROW(add(tape, a, b), ShapeError);
  EXPECT_THROW(matmul(tape, a, b), ShapeError);
}

TEST(Tape, LogOfNonPositiveIsDomainError) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2}, {1.0f, 0.0f}));
  EXPECT_THROW(log(tape, a), DomainError);
}

TEST(Tape, BackwardRequiresScalarAndRunsOnce) {
  Tape tape;
  Var a = tape.variable(Tensor(Shape{2}, {1, 2}));
  EXPECT_THROW(tape.backward(a), ShapeError);
  Var s = sum(tape, a);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(Tape, ConstantsCarryNoGradient) {
  Tape tape;
  Var a = tape.variable(Tensor(Shape{2}, {1, 2}));
  Var c = tape.constant(Tensor(Shape{2}, {3, 4}));
  tape.backward(sum(tape, mul(tape, a, c)));
  ASSERT_NE(tape.grad(a), nullptr);
  EXPECT_EQ(tape.grad(a)->vec(), (std::vector<float>{3, 4}));
  EXPECT_EQ(tape.grad(c), nullptr);
}

TEST(Tape, FanOutAccumulates) {
  // d/da sum(a*a + a) = 2a + 1
  Tape tape;
  Var a = tape.variable(Tensor(Shape{2}, {1.5f, -2.0f}));
  tape.backward(sum(tape, add(tape, mul(tape, a, a), a)));
  EXPECT_EQ(tape.grad(a)->vec(), (std::vector<float>{4.0f, -3.0f}));
}

TEST(Tape, WatchExposesInteriorGradient) {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{2}, {1, 2}));
  Var w = tape.watch(x);
  tape.backward(sum(tape, scale(tape, w, 3.0)));
  ASSERT_NE(tape.grad(w), nullptr);
  EXPECT_EQ(tape.grad(w)->vec(), (std::vector<float>{3, 3}));
}

TEST(Tape, ClampPassesNoGradientOutsideRange) {
  Tape tape;
  Var a = tape.variable(Tensor(Shape{3}, {-1.0f, 0.5f, 2.0f}));
  Var c = clamp(tape, a, 0.0, 1.0);
  EXPECT_EQ(tape.value(c).vec(), (std::vector<float>{0.0f, 0.5f, 1.0f}));
  tape.backward(sum(tape, c));
  EXPECT_EQ(tape.grad(a)->vec(), (std::vector<float>{0.0f, 1.0f, 0.0f}));
}

TEST(Tape, ElementwiseDispatchMatchesNamedOps) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2}, {0.5f, 2.0f}));
  Var b = tape.constant(Tensor(Shape{2}, {3.0f, 0.25f}));
  EXPECT_EQ(tape.value(elementwise(tape, ElementwiseOp::kPow, a, b)), tape.value(pow(tape, a, b)));
  EXPECT_EQ(tape.value(elementwise(tape, ElementwiseOp::kExp, a)), tape.value(exp(tape, a)));
  EXPECT_THROW(elementwise(tape, ElementwiseOp::kAdd, a), Error);
}

TEST(GradCheck, BinaryOps) {
  auto two = [](Rng& rng) {
    const Shape s = random_shape(rng);
    return std::vector<Tensor64>{random_tensor(s, rng), random_tensor(s, rng)};
  };
  check_op("add", [](auto& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }, two, 1);
  check_op("sub", [](auto& t, const std::vector<Var>& v) { return sub(t, v[0], v[1]); }, two, 2);
  check_op("mul", [](auto& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }, two, 3);
  check_op("pow", [](auto& t, const std::vector<Var>& v) { return pow(t, v[0], v[1]); },
           [](Rng& rng) {
             const Shape s = random_shape(rng);
             return std::vector<Tensor64>{random_tensor(s, rng, 0.2, 2.0), random_tensor(s, rng, -2, 2)};
           },
           4);
}

TEST(GradCheck, UnaryOps) {
  auto one = [](Rng& rng) { return std::vector<Tensor64>{random_tensor(random_shape(rng), rng)}; };
  auto positive = [](Rng& rng) {
    return std::vector<Tensor64>{random_tensor(random_shape(rng), rng, 0.1, 3.0)};
  };
  check_op("neg", [](auto& t, const std::vector<Var>& v) { return neg(t, v[0]); }, one, 5);
  check_op("exp", [](auto& t, const std::vector<Var>& v) { return exp(t, v[0]); }, one, 6);
  check_op("log", [](auto& t, const std::vector<Var>& v) { return log(t, v[0]); }, positive, 7);
  check_op("pow_scalar", [](auto& t, const std::vector<Var>& v) { return pow_scalar(t, v[0], 2.5); },
           positive, 8);
  check_op("scale", [](auto& t, const std::vector<Var>& v) { return scale(t, v[0], -1.75); }, one, 9);
  check_op("add_scalar", [](auto& t, const std::vector<Var>& v) { return add_scalar(t, v[0], 0.3); },
           one, 10);
  check_op("clamp", [](auto& t, const std::vector<Var>& v) { return clamp(t, v[0], -0.5, 0.5); },
           [](Rng& rng) {
             // Keep every entry clear of the clamp edges.
             Tensor64 x = random_tensor(random_shape(rng), rng);
             for (double& e : x.mutable_data()) {
               if (std::abs(std::abs(e) - 0.5) < 0.01) e = 0.2;
             }
             return std::vector<Tensor64>{x};
           },
           11);
}

TEST(GradCheck, ReductionsAndShapes) {
  auto one = [](Rng& rng) { return std::vector<Tensor64>{random_tensor(random_shape(rng), rng)}; };
  check_op("sum", [](auto& t, const std::vector<Var>& v) { return sum(t, v[0]); }, one, 12);
  check_op("mean", [](auto& t, const std::vector<Var>& v) { return mean(t, v[0]); }, one, 13);
  check_op("reshape",
           [](auto& t, const std::vector<Var>& v) { return reshape(t, v[0], Shape{t.value(v[0]).size()}); },
           one, 14);
  check_op("select", [](auto& t, const std::vector<Var>& v) { return select(t, v[0], 0); }, one, 15);
  check_op("expand_rows", [](auto& t, const std::vector<Var>& v) { return expand_rows(t, v[0], 3); },
           [](Rng& rng) { return std::vector<Tensor64>{random_tensor(Shape{1 + rng.below(5)}, rng)}; },
           16);
}

TEST(GradCheck, Matmul) {
  check_op("matmul", [](auto& t, const std::vector<Var>& v) { return matmul(t, v[0], v[1]); },
           [](Rng& rng) {
             const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
             return std::vector<Tensor64>{random_tensor(Shape{m, k}, rng), random_tensor(Shape{k, n}, rng)};
           },
           17);
}
