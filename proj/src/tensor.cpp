#include "dmsa/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace dmsa {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void check_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << what << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                     " values, got " + std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data, Id id)
    : shape_(std::move(shape)), data_(std::move(data)), id_(id) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for shape " + shape_str(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::requires_grad(bool on) const {
  return Tensor(shape_, data_, on ? next_id() : 0);
}

Tensor Tensor::detach() const { return Tensor(shape_, data_, 0); }

Tensor Tensor::with_data(std::vector<double> data) const { return Tensor(shape_, std::move(data)); }

Tensor::Id Tensor::next_id() {
  static std::atomic<Id> counter{0};
  return ++counter;
}

}  // namespace dmsa
