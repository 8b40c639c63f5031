#ifndef PNEUNET_AUTOGRAD_H_
#define PNEUNET_AUTOGRAD_H_

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pneunet/tensor.h"

namespace pneunet {

// Probabilities entering a logarithm are clamped to [kProbEpsilon, 1 - kProbEpsilon].
inline constexpr double kProbEpsilon = 1e-7;

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
  friend bool operator==(Var, Var) = default;
};

// Reverse-mode recorder. Every op appends one node holding its output value
// and a closure that maps the output gradient onto its inputs. Nodes are
// appended after their inputs, so the node list is already topologically
// ordered and backward is a single reverse sweep.
//
// A Tape is single-owner. Ops capture a reference to it, so it is neither
// copyable nor movable.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  // grad_in[i] is null when input i does not require a gradient.
  using BackwardFn =
      std::function<void(const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(TensorT value);
  Var variable(TensorT value);

  // Identity node that always requires a gradient, so an interior activation
  // can be inspected after backward even when nothing upstream is trainable.
  Var watch(Var v);

  Var record(const char* op, TensorT value, std::vector<Var> inputs, BackwardFn fn);

  const TensorT& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  // Throws ShapeError if loss is not a single element and Error if the tape
  // has already been swept.
  void backward(Var loss);
  bool consumed() const { return consumed_; }

  // Gradient of the swept loss with respect to v, or null if v does not
  // require a gradient or received none.
  const TensorT* grad(Var v) const;

 private:
  struct Node {
    const char* op;
    TensorT value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::optional<TensorT>> grads_;
  bool consumed_ = false;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

enum class ElementwiseOp { kAdd, kSub, kMul, kPow, kNeg, kLog, kExp };

// Binary ops require equal shapes; there is no implicit broadcasting.
template <typename T> Var add(BasicTape<T>& tape, Var a, Var b);
template <typename T> Var sub(BasicTape<T>& tape, Var a, Var b);
template <typename T> Var mul(BasicTape<T>& tape, Var a, Var b);
// a^b elementwise; requires a > 0.
template <typename T> Var pow(BasicTape<T>& tape, Var a, Var b);
template <typename T> Var neg(BasicTape<T>& tape, Var a);
// Throws DomainError for any input <= 0.
template <typename T> Var log(BasicTape<T>& tape, Var a);
template <typename T> Var exp(BasicTape<T>& tape, Var a);

// Dispatches on kind; b is required for the binary kinds and ignored otherwise.
template <typename T>
Var elementwise(BasicTape<T>& tape, ElementwiseOp kind, Var a, std::optional<Var> b = {});

// a^exponent with a constant exponent; requires a >= 0 unless exponent is integral.
template <typename T> Var pow_scalar(BasicTape<T>& tape, Var a, double exponent);
template <typename T> Var scale(BasicTape<T>& tape, Var a, double factor);
template <typename T> Var add_scalar(BasicTape<T>& tape, Var a, double offset);
// Values outside [lo, hi] are pinned and pass no gradient.
template <typename T> Var clamp(BasicTape<T>& tape, Var a, double lo, double hi);

// Reductions to a single-element tensor of shape [1].
template <typename T> Var sum(BasicTape<T>& tape, Var a);
template <typename T> Var mean(BasicTape<T>& tape, Var a);

// [m,k] x [k,n] -> [m,n]
template <typename T> Var matmul(BasicTape<T>& tape, Var a, Var b);

template <typename T> Var reshape(BasicTape<T>& tape, Var a, const Shape& shape);

// Explicit broadcast of a [u] vector to [rows, u].
template <typename T> Var expand_rows(BasicTape<T>& tape, Var v, std::size_t rows);

// Element `index` of a as a [1] tensor.
template <typename T> Var select(BasicTape<T>& tape, Var a, std::size_t index);

}  // namespace pneunet

#endif  // PNEUNET_AUTOGRAD_H_
