#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "sustain/errors.hpp"
#include "sustain/rng.hpp"

namespace sustain {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense row-major array of doubles with shape metadata. Carrier of all
/// activations, parameters and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, double fill_value);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor from(std::initializer_list<double> values);
  /// Glorot-style uniform init in [-limit, +limit].
  static Tensor uniform(Shape shape, double limit, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Unchecked indexed access; shape discipline is enforced at op boundaries.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Throws DimensionError naming both shapes when they differ.
  void require_same_shape(const Tensor& other, const std::string& context) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& s);

}  // namespace sustain
