#include "sustain/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sustain {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  for (std::size_t e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  if (values.size() != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  }
  data_ = std::move(values);
}

Tensor::Tensor(Shape shape, double fill_value) : Tensor(std::move(shape)) {
  fill(fill_value);
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::uniform(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = rng.uniform(-limit, limit);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::require_same_shape(const Tensor& other, const std::string& context) const {
  if (shape_ != other.shape_) {
    throw DimensionError(std::string(context) + ": shape " + shape_str(shape_) +
                         " does not match " + shape_str(other.shape_));
  }
}

}  // namespace sustain
