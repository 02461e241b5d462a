#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "beta/division.hpp"
#include "beta/nn.hpp"
#include "beta/rng.hpp"
#include "beta/tensor.hpp"

using namespace beta;

namespace {

MlpClassifier uniform_net(std::size_t d, std::size_t k) {
  MlpClassifier net(d, {}, k, 1);
  for (auto& p : net.parameters()) {
    Tensor& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v.at(i) = 0.0;
  }
  return net;
}

}  // namespace

TEST_CASE("per-sample losses of a uniform net are ln K") {
  MlpClassifier net = uniform_net(2, 4);
  Tensor x = Tensor::matrix(3, 2, {0.5, -1.0, 2.0, 0.1, -0.3, 0.9});
  auto losses = per_sample_losses(net, x, {0, 3, 2});
  for (double l : losses) CHECK(l == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("per-sample losses vanish for a perfectly confident fit") {
  MlpClassifier net = uniform_net(2, 3);
  net.bias(0).mutable_value() = Tensor::row({80.0, 0.0, 0.0});
  Tensor x = Tensor::matrix(2, 2, {1.0, 2.0, -1.0, 0.5});
  auto losses = per_sample_losses(net, x, {0, 0});
  CHECK(losses[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(losses[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("per-sample losses validate labels") {
  MlpClassifier net = uniform_net(2, 3);
  Tensor x = Tensor::matrix(1, 2, {0.0, 0.0});
  CHECK_THROWS_AS(per_sample_losses(net, x, {3}), std::invalid_argument);
  CHECK_THROWS_AS(per_sample_losses(net, x, {0, 1}), std::invalid_argument);
}

TEST_CASE("divide splits on the threshold") {
  SubdomainSplit s = divide({0.9, 0.7, 0.4}, {1, 0, 2}, 3, 0.8, "a");
  CHECK(s.easy == std::vector<std::size_t>{0});
  CHECK(s.hard == std::vector<std::size_t>{1, 2});
  CHECK(s.easy_labels == std::vector<int>{1});
  CHECK(s.easy_clean_prob == std::vector<double>{0.9});
  CHECK(s.origin == "a");
  CHECK(s.threshold == 0.8);
  // hard side starts one-hot at the pseudo label
  CHECK(s.hard_soft_labels.at(0, 0) == 1.0);
  CHECK(s.hard_soft_labels.at(1, 2) == 1.0);
  CHECK(s.hard_soft_labels.at(0, 1) == 0.0);
}

TEST_CASE("a floor threshold sends everything easy") {
  SubdomainSplit s = divide({0.2, 0.5, 0.01}, {0, 1, 0}, 2, 1e-9, "b");
  CHECK(s.easy.size() == 3);
  CHECK(s.hard.empty());
  CHECK(s.hard_soft_labels.rows() == 0);
}

TEST_CASE("divide partitions every index exactly once") {
  Rng rng(33);
  std::vector<double> post(257);
  std::vector<int> labels(257);
  for (std::size_t i = 0; i < post.size(); ++i) {
    post[i] = rng.uniform();
    labels[i] = static_cast<int>(rng.index(4));
  }
  SubdomainSplit s = divide(post, labels, 4, 0.5, "a");
  CHECK(s.total() == 257);
  std::vector<int> seen(257, 0);
  for (std::size_t i : s.easy) {
    ++seen[i];
    CHECK(post[i] >= 0.5);
  }
  for (std::size_t i : s.hard) {
    ++seen[i];
    CHECK(post[i] < 0.5);
  }
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("an empty easy side is a threshold error") {
  CHECK_THROWS_WITH_AS(divide({0.1, 0.2}, {0, 1}, 2, 0.9, "a"),
                       doctest::Contains("lower tau"), std::runtime_error);
}

TEST_CASE("divide validates threshold and posteriors") {
  CHECK_THROWS_AS(divide({0.5}, {0}, 2, 0.0, "a"), std::invalid_argument);
  CHECK_THROWS_AS(divide({0.5}, {0}, 2, 1.5, "a"), std::invalid_argument);
  CHECK_THROWS_AS(divide({1.2}, {0}, 2, 0.5, "a"), std::invalid_argument);
  CHECK_THROWS_AS(divide({0.5, 0.6}, {0}, 2, 0.5, "a"), std::invalid_argument);
}

TEST_CASE("division dump writes one row per sample") {
  SubdomainSplit s = divide({0.9, 0.3}, {0, 1}, 2, 0.8, "a");
  const std::string path = "division_test_dump.csv";
  write_division_csv(path, {0.05, 1.7}, {0.9, 0.3}, s);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "index,loss,clean_prob,subdomain");
  std::getline(in, line);
  CHECK(line.find("0,") == 0);
  CHECK(line.find("easy") != std::string::npos);
  std::getline(in, line);
  CHECK(line.find("hard") != std::string::npos);
  std::remove(path.c_str());

  CHECK_THROWS_AS(write_division_csv(path, {0.05}, {0.9, 0.3}, s),
                  std::invalid_argument);
}
