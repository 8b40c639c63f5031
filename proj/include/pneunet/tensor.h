#ifndef PNEUNET_TENSOR_H_
#define PNEUNET_TENSOR_H_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pneunet {

// Extents of a dense row-major tensor. Every extent is >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

// Dense n-dimensional array. Values are plain data; gradients live on the
// Tape that recorded the computation.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  // Throws ShapeError on a length mismatch and DomainError on non-finite data.
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(const Shape& shape);
  static BasicTensor full(const Shape& shape, T value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> mutable_data() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  // Same data viewed with another shape of equal element count.
  BasicTensor reshaped(const Shape& shape) const;

  bool all_finite() const;

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Checked construction: product(shape) must equal values.size() and every
// value must be finite.
template <typename T>
BasicTensor<T> tensor_from(const Shape& shape, std::vector<T> values) {
  return BasicTensor<T>(shape, std::move(values));
}

inline Tensor tensor_from(const Shape& shape, std::initializer_list<float> values) {
  return Tensor(shape, std::vector<float>(values));
}

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace pneunet

#endif  // PNEUNET_TENSOR_H_
