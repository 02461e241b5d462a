#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "beta/tensor.hpp"

using beta::Tensor;

TEST_CASE("tensor shape and element access") {
  Tensor m = Tensor::matrix(2, 3, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.size() == 6);
  CHECK(m.at(1, 2) == 6.0);
  m.at(0, 0) = -1.5;
  CHECK(m.data()[0] == -1.5);
  CHECK(m.shape_str() == "(2, 3)");
}

TEST_CASE("tensor factories") {
  Tensor z = Tensor::zeros({3, 2});
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == 0.0);
  Tensor s = Tensor::scalar(4.25);
  CHECK(s.rows() == 1);
  CHECK(s.cols() == 1);
  CHECK(s.at(0) == 4.25);
  Tensor r = Tensor::row({7.0, 8.0});
  CHECK(r.rows() == 1);
  CHECK(r.at(0, 1) == 8.0);
  Tensor f({2, 2}, 0.25);
  CHECK(f.at(1, 1) == 0.25);
}

TEST_CASE("tensor rejects inconsistent shape") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}),
                  std::invalid_argument);
}

TEST_CASE("tensor rejects non-finite input") {
  CHECK_THROWS_AS(Tensor({1, 2}, std::vector<double>{1.0, std::nan("")}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      Tensor({1, 1}, std::vector<double>{std::numeric_limits<double>::infinity()}),
      std::invalid_argument);
}

TEST_CASE("tensor validate catches values written after construction") {
  Tensor t = Tensor::zeros({1, 2});
  t.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("same_shape") {
  CHECK(Tensor::zeros({2, 3}).same_shape(Tensor::zeros({2, 3})));
  CHECK_FALSE(Tensor::zeros({2, 3}).same_shape(Tensor::zeros({3, 2})));
}

TEST_CASE("shape_product") {
  CHECK(beta::shape_product({2, 3, 4}) == 24);
  CHECK(beta::shape_product({}) == 1);
}
