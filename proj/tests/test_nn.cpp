#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "beta/autodiff.hpp"
#include "beta/nn.hpp"
#include "beta/tensor.hpp"
#include "fd_check.hpp"

using namespace beta;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("nn_test_") + name;
}

}  // namespace

TEST_CASE("init is deterministic per seed and differs across seeds") {
  MlpClassifier a(4, {8}, 3, 11), b(4, {8}, 3, 11), c(4, {8}, 3, 12);
  CHECK(MlpClassifier::parameters_equal(a, b));
  CHECK_FALSE(MlpClassifier::parameters_equal(a, c));
  CHECK(MlpClassifier::parameter_distance(a, c) > 0.0);
}

TEST_CASE("forward gives simplex rows and argmax prediction") {
  MlpClassifier net(2, {5}, 3, 7);
  Tensor x = Tensor::matrix(4, 2, {0.1, -0.2, 1.5, 0.4, -0.9, 0.0, 2.0, -1.0});
  Tensor p = net.forward(x);
  CHECK(p.rows() == 4);
  CHECK(p.cols() == 3);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(p.at(i, j) >= 0.0);
      s += p.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto labels = net.predict(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double best = p.at(i, static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < 3; ++j) CHECK(best >= p.at(i, j));
  }
}

TEST_CASE("predict breaks exact ties toward the lowest class index") {
  MlpClassifier net(2, {}, 3, 1);
  for (auto& p : net.parameters()) {
    Tensor& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v.at(i) = 0.0;
  }
  auto labels = net.predict(Tensor::matrix(2, 2, {1.0, 2.0, -3.0, 0.5}));
  CHECK(labels[0] == 0);
  CHECK(labels[1] == 0);
}

TEST_CASE("forward rejects wrong input width") {
  MlpClassifier net(3, {4}, 2, 5);
  CHECK_THROWS_AS(net.forward(Tensor::zeros({2, 4})), std::invalid_argument);
}

TEST_CASE("network gradients pass finite differences") {
  MlpClassifier net(3, {4}, 2, 21);
  Tensor x = Tensor::matrix(5, 3, {0.3, -0.8, 1.2, 0.5, 0.9, -1.1, -0.4, 0.2,
                                   0.7, 1.5, -0.3, 0.1, -0.9, -0.6, 0.8});
  Tensor t = Tensor::matrix(5, 2, {1, 0, 0, 1, 1, 0, 0, 1, 1, 0});
  auto build = [&]() {
    ad::Var lp = ad::log_softmax_rows(net.forward_logits(x));
    return ad::scale(ad::sum_all(ad::mul(ad::Var::constant(t), lp)), -0.2);
  };
  CHECK(beta::testing::fd_worst_rel_error(build, net.parameters()) < 1e-4);
}

TEST_CASE("sgd without momentum takes w=3 to 2.4 on the squared loss") {
  MlpClassifier net(1, {}, 2, 3);
  // collapse to one effective weight: logits (w, 0), loss = w^2
  net.weight(0).mutable_value() = Tensor::matrix(1, 2, {3.0, 0.0});
  net.bias(0).mutable_value() = Tensor::zeros({1, 2});
  SgdConfig cfg;
  cfg.lr_body = cfg.lr_head = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  SgdState opt(net, cfg);

  auto loss = [&]() {
    ad::Var z = net.forward_logits(Tensor::matrix(1, 1, {1.0}));
    ad::Var w_only = ad::mul(z, ad::Var::constant(Tensor::row({1.0, 0.0})));
    return ad::sum_all(ad::mul(w_only, w_only));
  };
  ad::backward(loss());
  // bias shares the gradient path; its grad on the tracked coordinate is 6 too
  opt.step(net);
  CHECK(net.weight(0).value().at(0, 0) == doctest::Approx(2.4));
}

TEST_CASE("sgd follows the momentum and decoupled weight decay recurrences") {
  MlpClassifier net(2, {3}, 2, 9);
  SgdConfig cfg;
  cfg.lr_body = 0.01;
  cfg.lr_head = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.5;
  SgdState opt(net, cfg);

  auto& params = net.parameters();
  std::vector<Tensor> w0, expect_v(params.size(), Tensor());
  for (auto& p : params) w0.push_back(p.value());

  // hand the optimizer fixed gradients and track the recurrence by hand
  std::vector<Tensor> g1, g2;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor g = Tensor::zeros(params[p].value().shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      g.at(i) = 0.1 * static_cast<double>(p + 1) + 0.01 * static_cast<double>(i);
    g1.push_back(g);
    for (std::size_t i = 0; i < g.size(); ++i) g.at(i) = -g.at(i);
    g2.push_back(g);
  }

  auto apply_manual = [&](std::vector<Tensor>& w, std::vector<Tensor>& v,
                          const std::vector<Tensor>& g) {
    for (std::size_t p = 0; p < w.size(); ++p) {
      double lr = p >= net.head_param_offset() ? cfg.lr_head : cfg.lr_body;
      if (v[p].size() == 0) v[p] = Tensor::zeros(w[p].shape());
      for (std::size_t i = 0; i < w[p].size(); ++i) {
        v[p].at(i) = cfg.momentum * v[p].at(i) + g[p].at(i);
        w[p].at(i) -= lr * v[p].at(i) + lr * cfg.weight_decay * w[p].at(i);
      }
    }
  };

  for (const auto& g : {g1, g2}) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& slot = params[p].grad();
      for (std::size_t i = 0; i < slot.size(); ++i) slot.at(i) += g[p].at(i);
    }
    opt.step(net);
    apply_manual(w0, expect_v, g);
  }

  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < w0[p].size(); ++i)
      CHECK(params[p].value().at(i) == doctest::Approx(w0[p].at(i)).epsilon(1e-12));
}

TEST_CASE("sgd step without a recorded gradient is a usage error") {
  MlpClassifier net(2, {}, 2, 1);
  SgdState opt(net, SgdConfig{});
  CHECK_THROWS_AS(opt.step(net), std::logic_error);
}

TEST_CASE("head parameters sit at the advertised offset") {
  MlpClassifier net(3, {4, 5}, 2, 1);
  CHECK(net.head_param_offset() == 4);
  CHECK(net.parameters()[4].value().rows() == 5);
  CHECK(net.parameters()[4].value().cols() == 2);
}

TEST_CASE("clone has independent storage") {
  MlpClassifier a(2, {3}, 2, 5);
  MlpClassifier b = a.clone();
  CHECK(MlpClassifier::parameters_equal(a, b));
  b.weight(0).mutable_value().at(0, 0) += 1.0;
  CHECK_FALSE(MlpClassifier::parameters_equal(a, b));
}

TEST_CASE("checkpoint round-trips bit for bit") {
  std::string path = temp_path("roundtrip.ckpt");
  MlpClassifier net(3, {6, 4}, 5, 123);
  checkpoint_save(net, path);
  MlpClassifier back = checkpoint_load(path);
  CHECK(back.widths() == net.widths());
  CHECK(MlpClassifier::parameters_equal(net, back));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint_load_into validates architecture") {
  std::string path = temp_path("into.ckpt");
  MlpClassifier net(3, {6}, 2, 1);
  checkpoint_save(net, path);

  MlpClassifier same(3, {6}, 2, 99);
  checkpoint_load_into(same, path);
  CHECK(MlpClassifier::parameters_equal(net, same));

  MlpClassifier other(3, {7}, 2, 1);
  CHECK_THROWS_WITH_AS(checkpoint_load_into(other, path),
                       doctest::Contains("layer 0"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic, truncation and trailing bytes") {
  std::string path = temp_path("corrupt.ckpt");
  MlpClassifier net(2, {3}, 2, 1);

  checkpoint_save(net, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("not a BETA"),
                       std::runtime_error);

  checkpoint_save(net, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  }
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("truncated"),
                       std::runtime_error);

  checkpoint_save(net, path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put('\0');
  }
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("trailing"),
                       std::runtime_error);

  CHECK_THROWS_AS(checkpoint_load(temp_path("missing.ckpt")), std::runtime_error);
  std::remove(path.c_str());
}
