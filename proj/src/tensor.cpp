#include "beta/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beta {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_product(shape_) != values_.size()) {
    std::ostringstream msg;
    msg << "tensor shape " << shape_str() << " does not match value count "
        << values_.size();
    throw std::invalid_argument(msg.str());
  }
  validate();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {
  validate();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape), 0.0);
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw std::invalid_argument("tensor is not 2-D");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw std::invalid_argument("tensor is not 2-D");
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return values_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return values_[r * cols() + c];
}

std::string Tensor::shape_str() const {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << ", ";
    out << shape_[i];
  }
  out << ")";
  return out.str();
}

Tensor Tensor::gather_rows(const std::vector<std::size_t>& row_ids) const {
  Tensor out({row_ids.size(), cols()}, 0.0);
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    if (row_ids[i] >= rows()) {
      throw std::invalid_argument("gather_rows: row " +
                                  std::to_string(row_ids[i]) + " out of range");
    }
    for (std::size_t j = 0; j < cols(); ++j) out.at(i, j) = at(row_ids[i], j);
  }
  return out;
}

void Tensor::validate() const {
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("tensor contains a non-finite value");
    }
  }
}

}  // namespace beta
