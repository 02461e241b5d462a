#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace beta {

// Dense row-major array of doubles. Values must be finite; NaN/Inf are
// rejected at construction and after any mutation via validate().
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);
  Tensor(std::vector<std::size_t> shape, double fill);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);           // 1 x n
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return values_[i]; }
  double at(std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  // Throws std::invalid_argument if any entry is NaN or infinite.
  void validate() const;

  // New matrix made of the given rows, in order; indices may repeat.
  Tensor gather_rows(const std::vector<std::size_t>& rows) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace beta
