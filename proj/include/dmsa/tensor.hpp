#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmsa/error.hpp"

namespace dmsa {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Tensors are values: the buffer is shared between copies and never mutated
/// after construction. A tensor is "tracked" when it carries a non-zero id;
/// leaves get an id from `requires_grad()`, operation outputs get one when
/// they are recorded on the active GradTape.
class Tensor {
 public:
  using Id = std::uint64_t;

  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& buffer() const { return data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return id_ != 0; }
  Id id() const { return id_; }

  /// Copy of this tensor registered as a gradient leaf with a fresh id.
  Tensor requires_grad(bool on) const;
  /// Copy of this tensor with no tape identity.
  Tensor detach() const;

  Tensor with_data(std::vector<double> data) const;

  static Id next_id();

 private:
  friend class GradTape;
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data, Id id);

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Id id_ = 0;
};

/// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* what);

}  // namespace dmsa
