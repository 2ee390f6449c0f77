// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vigage {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an attached gradient slot.
///
/// Values are fixed once constructed unless the owner explicitly writes
/// through `data()`. The gradient slot is mutable even on const tensors so
/// that a tape can accumulate into parameters it only reads.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Extent along `axis`; throws DimensionError when out of range.
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  bool has_grad() const noexcept { return grad_.has_value(); }
  /// Gradient slot, created zero-filled on first access.
  std::vector<double>& grad() const;
  void clear_grad() const noexcept { grad_.reset(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  mutable std::optional<std::vector<double>> grad_;
};

}  // namespace vigage
