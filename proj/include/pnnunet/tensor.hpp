#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pnnunet/errors.hpp"

namespace pnn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major N-dimensional array. Four-dimensional tensors are laid
/// out NCHW.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.setZero(shape_size(shape_));
  }

  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar at(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  void check_extents() const {
    for (Index e : shape_)
      if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape_));
  }

  Shape shape_;
  Array data_;
};

/// Integer label maps for a batch, laid out N x H x W.
struct LabelBatch {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  std::vector<int> labels;

  LabelBatch() = default;
  LabelBatch(Index n, Index h, Index w) : batch(n), height(h), width(w), labels(static_cast<std::size_t>(n * h * w), 0) {}

  int& at(Index n, Index y, Index x) { return labels[static_cast<std::size_t>((n * height + y) * width + x)]; }
  int at(Index n, Index y, Index x) const { return labels[static_cast<std::size_t>((n * height + y) * width + x)]; }
};

/// A trainable weight and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Index fan_in = 1;

  Parameter() = default;
  Parameter(Shape shape, Index fan) : value(shape), grad(shape), fan_in(fan) {}
};

}  // namespace pnn
