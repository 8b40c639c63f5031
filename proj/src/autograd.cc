#include "pneunet/autograd.h"

#include <cmath>

#include "pneunet/error.h"
#include "pneunet/kernels.h"

namespace pneunet {

template <typename T>
const typename BasicTape<T>::Node& BasicTape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("unknown tape variable");
  return nodes_[v.id];
}

template <typename T>
Var BasicTape<T>::constant(TensorT value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename T>
Var BasicTape<T>::variable(TensorT value) {
  if (consumed_) throw Error("tape already consumed");
  if (!value.all_finite()) throw DomainError("variable values must be finite");
  nodes_.push_back(Node{"variable", std::move(value), {}, nullptr, true});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::watch(Var v) {
  TensorT copy = value(v);
  nodes_.push_back(Node{"watch", std::move(copy), {v},
                        [](const TensorT& g, std::span<TensorT* const> in) {
                          if (in[0]) {
                            auto dst = in[0]->mutable_data();
                            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                          }
                        },
                        true});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::record(const char* op, TensorT value, std::vector<Var> inputs,
                         BackwardFn fn) {
  if (consumed_) throw Error("tape already consumed");
  if (!value.all_finite()) {
    throw DomainError(std::string("non-finite output from ") + op);
  }
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || requires_grad(in);
  if (!needs_grad) fn = nullptr;
  nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(fn), needs_grad});
  return Var{nodes_.size() - 1};
}

template <typename T>
void BasicTape<T>::backward(Var loss) {
  if (consumed_) throw Error("tape already consumed");
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + root.value.shape().str());
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), std::nullopt);
  if (!root.requires_grad) return;
  grads_[loss.id] = TensorT::full(root.value.shape(), T{1});

  std::vector<TensorT*> slots;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !grads_[i]) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const Var in = n.inputs[j];
      if (!nodes_[in.id].requires_grad) continue;
      if (!grads_[in.id]) grads_[in.id] = TensorT::zeros(nodes_[in.id].value.shape());
      slots[j] = &*grads_[in.id];
    }
    n.backward(*grads_[i], slots);
  }
}

template <typename T>
const typename BasicTape<T>::TensorT* BasicTape<T>::grad(Var v) const {
  node(v);
  if (v.id >= grads_.size() || !grads_[v.id]) return nullptr;
  return &*grads_[v.id];
}

namespace {

template <typename T>
void require_same_shape(const BasicTape<T>& tape, Var a, Var b, const char* op) {
  if (tape.shape(a) != tape.shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + tape.shape(a).str() +
                     " vs " + tape.shape(b).str());
  }
}

// Unary elementwise op given forward f(x) and local derivative df(x, y).
template <typename T, typename F, typename DF>
Var unary(BasicTape<T>& tape, const char* op, Var a, F f, DF df) {
  const auto& x = tape.value(a);
  auto out = BasicTensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return tape.record(op, std::move(out), {a},
                     [&tape, a, df, y = Var{tape.size()}](const BasicTensor<T>& g,
                                                          std::span<BasicTensor<T>* const> in) {
                       const auto& xv = tape.value(a);
                       const auto& yv = tape.value(y);
                       auto dst = in[0]->mutable_data();
                       for (std::size_t i = 0; i < dst.size(); ++i) {
                         dst[i] += g[i] * df(xv[i], yv[i]);
                       }
                     });
}

}  // namespace

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "add");
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  auto out = BasicTensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record("add", std::move(out), {a, b},
                     [](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (BasicTensor<T>* dst : in) {
                         if (!dst) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                       }
                     });
}

template <typename T>
Var sub(BasicTape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "sub");
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  auto out = BasicTensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return tape.record("sub", std::move(out), {a, b},
                     [](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                       if (in[1]) for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                     });
}

template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "mul");
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  auto out = BasicTensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record("mul", std::move(out), {a, b},
                     [&tape, a, b](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       const auto& xv = tape.value(a);
                       const auto& yv = tape.value(b);
                       if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * yv[i];
                       if (in[1]) for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * xv[i];
                     });
}

template <typename T>
Var pow(BasicTape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "pow");
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  auto out = BasicTensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > T{0})) throw DomainError("pow: base must be positive");
    out[i] = std::pow(x[i], y[i]);
  }
  const Var result{tape.size()};
  return tape.record("pow", std::move(out), {a, b},
                     [&tape, a, b, result](const BasicTensor<T>& g,
                                           std::span<BasicTensor<T>* const> in) {
                       const auto& xv = tape.value(a);
                       const auto& yv = tape.value(b);
                       const auto& zv = tape.value(result);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (in[0]) (*in[0])[i] += g[i] * yv[i] * std::pow(xv[i], yv[i] - T{1});
                         if (in[1]) (*in[1])[i] += g[i] * zv[i] * std::log(xv[i]);
                       }
                     });
}

template <typename T>
Var neg(BasicTape<T>& tape, Var a) {
  return unary(tape, "neg", a, [](T x) { return -x; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var log(BasicTape<T>& tape, Var a) {
  for (T v : tape.value(a).data()) {
    if (!(v > T{0})) throw DomainError("log: input must be strictly positive");
  }
  return unary(tape, "log", a, [](T x) { return std::log(x); },
               [](T x, T) { return T{1} / x; });
}

template <typename T>
Var exp(BasicTape<T>& tape, Var a) {
  return unary(tape, "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var elementwise(BasicTape<T>& tape, ElementwiseOp kind, Var a, std::optional<Var> b) {
  const bool binary = kind == ElementwiseOp::kAdd || kind == ElementwiseOp::kSub ||
                      kind == ElementwiseOp::kMul || kind == ElementwiseOp::kPow;
  if (binary && !b) throw ConfigError("elementwise: binary op needs a second operand");
  switch (kind) {
    case ElementwiseOp::kAdd: return add(tape, a, *b);
    case ElementwiseOp::kSub: return sub(tape, a, *b);
    case ElementwiseOp::kMul: return mul(tape, a, *b);
    case ElementwiseOp::kPow: return pow(tape, a, *b);
    case ElementwiseOp::kNeg: return neg(tape, a);
    case ElementwiseOp::kLog: return log(tape, a);
    case ElementwiseOp::kExp: return exp(tape, a);
  }
  throw ConfigError("elementwise: unknown op");
}

template <typename T>
Var pow_scalar(BasicTape<T>& tape, Var a, double exponent) {
  const T e = static_cast<T>(exponent);
  const bool integral = std::floor(exponent) == exponent;
  if (!integral) {
    for (T v : tape.value(a).data()) {
      if (v < T{0}) throw DomainError("pow_scalar: negative base with fractional exponent");
    }
  }
  return unary(
      tape, "pow_scalar", a, [e](T x) { return std::pow(x, e); },
      [e](T x, T) { return e == T{0} ? T{0} : e * std::pow(x, e - T{1}); });
}

template <typename T>
Var scale(BasicTape<T>& tape, Var a, double factor) {
  const T f = static_cast<T>(factor);
  return unary(tape, "scale", a, [f](T x) { return f * x; }, [f](T, T) { return f; });
}

template <typename T>
Var add_scalar(BasicTape<T>& tape, Var a, double offset) {
  const T c = static_cast<T>(offset);
  return unary(tape, "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Var clamp(BasicTape<T>& tape, Var a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary(
      tape, "clamp", a, [l, h](T x) { return x < l ? l : (x > h ? h : x); },
      [l, h](T x, T) { return (x < l || x > h) ? T{0} : T{1}; });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var a) {
  T acc = 0;
  for (T v : tape.value(a).data()) acc += v;
  return tape.record("sum", BasicTensor<T>::full(Shape{1}, acc), {a},
                     [](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (T& d : in[0]->mutable_data()) d += g[0];
                     });
}

template <typename T>
Var mean(BasicTape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T inv = T{1} / static_cast<T>(x.size());
  return tape.record("mean", BasicTensor<T>::full(Shape{1}, acc * inv), {a},
                     [inv](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (T& d : in[0]->mutable_data()) d += g[0] * inv;
                     });
}

template <typename T>
Var matmul(BasicTape<T>& tape, Var a, Var b) {
  const Shape& sa = tape.shape(a);
  const Shape& sb = tape.shape(b);
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + sa.str() + " and " + sb.str());
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto out = BasicTensor<T>::zeros(Shape{m, n});
  kernels::parallel::matmul<T>(tape.value(a).data(), tape.value(b).data(),
                               out.mutable_data(), m, k, n);
  return tape.record("matmul", std::move(out), {a, b},
                     [&tape, a, b, m, k, n](const BasicTensor<T>& g,
                                            std::span<BasicTensor<T>* const> in) {
                       if (in[0]) {
                         // dA = dC * B^T
                         std::vector<T> tmp(m * k);
                         kernels::parallel::matmul_a_bt<T>(g.data(), tape.value(b).data(),
                                                           tmp, m, n, k);
                         for (std::size_t i = 0; i < tmp.size(); ++i) (*in[0])[i] += tmp[i];
                       }
                       if (in[1]) {
                         // dB = A^T * dC
                         std::vector<T> tmp(k * n);
                         kernels::parallel::matmul_at_b<T>(tape.value(a).data(), g.data(),
                                                           tmp, k, m, n);
                         for (std::size_t i = 0; i < tmp.size(); ++i) (*in[1])[i] += tmp[i];
                       }
                     });
}

template <typename T>
Var reshape(BasicTape<T>& tape, Var a, const Shape& shape) {
  return tape.record("reshape", tape.value(a).reshaped(shape), {a},
                     [](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                     });
}

template <typename T>
Var expand_rows(BasicTape<T>& tape, Var v, std::size_t rows) {
  const auto& x = tape.value(v);
  if (x.rank() != 1) throw ShapeError("expand_rows: expected a vector, got " + x.shape().str());
  const std::size_t u = x.size();
  auto out = BasicTensor<T>::zeros(Shape{rows, u});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < u; ++j) out[r * u + j] = x[j];
  }
  return tape.record("expand_rows", std::move(out), {v},
                     [rows, u](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < u; ++j) (*in[0])[j] += g[r * u + j];
                       }
                     });
}

template <typename T>
Var select(BasicTape<T>& tape, Var a, std::size_t index) {
  const auto& x = tape.value(a);
  if (index >= x.size()) throw ShapeError("select: index out of range");
  return tape.record("select", BasicTensor<T>::full(Shape{1}, x[index]), {a},
                     [index](const BasicTensor<T>& g, std::span<BasicTensor<T>* const> in) {
                       (*in[0])[index] += g[0];
                     });
}

#define PNEUNET_INSTANTIATE(T)                                                  \
  template class BasicTape<T>;                                                 \
  template Var add<T>(BasicTape<T>&, Var, Var);                                \
  template Var sub<T>(BasicTape<T>&, Var, Var);                                \
  template Var mul<T>(BasicTape<T>&, Var, Var);                                \
  template Var pow<T>(BasicTape<T>&, Var, Var);                                \
  template Var neg<T>(BasicTape<T>&, Var);                                     \
  template Var log<T>(BasicTape<T>&, Var);                                     \
  template Var exp<T>(BasicTape<T>&, Var);                                     \
  template Var elementwise<T>(BasicTape<T>&, ElementwiseOp, Var, std::optional<Var>); \
  template Var pow_scalar<T>(BasicTape<T>&, Var, double);                      \
  template Var scale<T>(BasicTape<T>&, Var, double);                           \
  template Var add_scalar<T>(BasicTape<T>&, Var, double);                      \
  template Var clamp<T>(BasicTape<T>&, Var, double, double);                   \
  template Var sum<T>(BasicTape<T>&, Var);                                     \
  template Var mean<T>(BasicTape<T>&, Var);                                    \
  template Var matmul<T>(BasicTape<T>&, Var, Var);                             \
  template Var reshape<T>(BasicTape<T>&, Var, const Shape&);                   \
  template Var expand_rows<T>(BasicTape<T>&, Var, std::size_t);                \
  template Var select<T>(BasicTape<T>&, Var, std::size_t);
PNEUNET_INSTANTIATE(float)
PNEUNET_INSTANTIATE(double)
#undef PNEUNET_INSTANTIATE

}  // namespace pneunet
