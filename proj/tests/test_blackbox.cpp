#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "beta/blackbox.hpp"
#include "beta/data.hpp"
#include "beta/nn.hpp"
#include "beta/rng.hpp"

using namespace beta;
using nlohmann::json;

namespace {

MlpClassifier zero_net(std::size_t d, std::size_t k) {
  MlpClassifier net(d, {}, k, 1);
  for (auto& p : net.parameters()) {
    Tensor& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v.at(i) = 0.0;
  }
  return net;
}

// Two well-separated Gaussian blobs on the x axis.
LabeledVectorSet blob_pair(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({n, 2});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? 0 : 1;
    const double cx = label == 0 ? -2.0 : 2.0;
    x.at(i, 0) = cx + 0.5 * rng.normal();
    x.at(i, 1) = 0.5 * rng.normal();
    y[i] = label;
  }
  return LabeledVectorSet(Domain::source, std::move(x), std::move(y));
}

// Structureless set: any fixed classifier sits at chance accuracy.
LabeledVectorSet random_labels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({n, 3});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x.at(i, j) = rng.normal();
    y[i] = static_cast<int>(rng.index(2));
  }
  return LabeledVectorSet(Domain::source, std::move(x), std::move(y));
}

int raw_connect(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  ::inet_pton(AF_INET, "127.0.0.1", &sa.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0);
  return fd;
}

std::string raw_read_line(int fd) {
  std::string line;
  char c = 0;
  while (::read(fd, &c, 1) == 1) {
    if (c == '\n') return line;
    line.push_back(c);
  }
  return line;
}

}  // namespace

TEST_CASE("request lines map to labeled responses") {
  MlpClassifier net = zero_net(2, 3);
  net.bias(0).mutable_value() = Tensor::row({0.0, 5.0, 0.0});
  const json r = json::parse(handle_request(net, R"({"id":7,"x":[0.1,0.2]})"));
  CHECK(r["id"] == 7);
  CHECK(r["label"] == 1);
  CHECK_FALSE(r.contains("error"));
}

TEST_CASE("a wrong feature width answers a dim error") {
  MlpClassifier net = zero_net(2, 3);
  const json r = json::parse(handle_request(net, R"({"id":4,"x":[1.0]})"));
  CHECK(r["id"] == 4);
  CHECK(r["error"] == "dim");
}

TEST_CASE("unparseable requests answer errors instead of dying") {
  MlpClassifier net = zero_net(2, 3);
  CHECK(json::parse(handle_request(net, "not json"))["error"] == "parse");
  CHECK(json::parse(handle_request(net, "[1,2]"))["error"] == "parse");
  CHECK(json::parse(handle_request(net, R"({"x":[1,2]})"))["error"] == "parse");
  CHECK(json::parse(handle_request(net, R"({"id":1,"x":"no"})"))["error"] ==
        "parse");
  CHECK(json::parse(handle_request(net, R"({"id":1,"x":[1,"a"]})"))["error"] ==
        "parse");
  CHECK(json::parse(handle_request(net, R"({"id":1,"meta":"y"})"))["error"] ==
        "parse");
}

TEST_CASE("the meta request reports model shape") {
  MlpClassifier net = zero_net(5, 4);
  const json r = json::parse(handle_request(net, R"({"id":2,"meta":true})"));
  CHECK(r["id"] == 2);
  CHECK(r["classes"] == 4);
  CHECK(r["width"] == 5);
}

TEST_CASE("the stream loop keeps serving after a malformed line") {
  MlpClassifier net = zero_net(2, 2);
  std::istringstream in(
      "garbage\n{\"id\":1,\"x\":[0.0,0.0]}\n{\"id\":2,\"meta\":true}\n");
  std::ostringstream out;
  serve_stream(net, in, out);
  std::istringstream lines(out.str());
  std::string l1, l2, l3;
  std::getline(lines, l1);
  std::getline(lines, l2);
  std::getline(lines, l3);
  CHECK(json::parse(l1)["error"] == "parse");
  CHECK(json::parse(l2)["label"] == 0);
  CHECK(json::parse(l3)["classes"] == 2);
}

TEST_CASE("an in-process handle exposes labels and a query bill") {
  InProcessBlackBox box(zero_net(2, 4));
  CHECK(box.num_classes() == 4);
  CHECK(box.input_width() == 2);
  CHECK(box.transport() == "in-process");
  Tensor batch = Tensor::matrix(3, 2, {1.0, 2.0, -1.0, 0.0, 0.5, 0.5});
  // all-zero net ties every class; ties go to the lowest index
  const std::vector<int> labels = box.predict_hard(batch);
  CHECK(labels == std::vector<int>{0, 0, 0});
  CHECK(box.queries() == 3);
  CHECK(box.predict_hard(batch) == labels);
  CHECK(box.queries() == 6);
  CHECK_THROWS_AS(box.predict_hard(Tensor::matrix(1, 3, {1.0, 2.0, 3.0})),
                  std::invalid_argument);
}

TEST_CASE("socket transport matches the in-process labels bit for bit") {
  MlpClassifier model(3, {8}, 4, 99);
  BlackBoxServer server(model.clone(), "127.0.0.1:0");
  SocketBlackBox wire(server.address());
  InProcessBlackBox local(model.clone());

  CHECK(wire.num_classes() == 4);
  CHECK(wire.input_width() == 3);
  CHECK(wire.transport() == "socket");

  Rng rng(5);
  Tensor batch = Tensor::zeros({1000, 3});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.at(i) = rng.normal(0, 2);

  const std::vector<int> remote = wire.predict_hard(batch);
  const std::vector<int> direct = local.predict_hard(batch);
  REQUIRE(remote.size() == 1000);
  CHECK(remote == direct);
  CHECK(wire.queries() == 1000);
  server.stop();
}

TEST_CASE("one server answers parallel clients independently") {
  MlpClassifier model(2, {6}, 3, 7);
  BlackBoxServer server(model.clone(), "127.0.0.1:0");
  InProcessBlackBox local(model.clone());
  Rng rng(11);
  Tensor batch = Tensor::zeros({64, 2});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.at(i) = rng.normal();
  const std::vector<int> want = local.predict_hard(batch);

  std::vector<std::thread> clients;
  std::vector<int> ok(4, 0);
  for (int c = 0; c < 4; ++c) {
    clients.emplace_back([&, c] {
      SocketBlackBox wire(server.address());
      ok[c] = wire.predict_hard(batch) == want ? 1 : 0;
    });
  }
  for (auto& t : clients) t.join();
  CHECK(ok == std::vector<int>{1, 1, 1, 1});
  server.stop();
}

TEST_CASE("a raw connection survives its own garbage") {
  BlackBoxServer server(zero_net(2, 2), "127.0.0.1:0");
  const int fd = raw_connect(server.port());
  const std::string payload = "oops\n{\"id\":9,\"meta\":true}\n";
  REQUIRE(::write(fd, payload.data(), payload.size()) ==
          static_cast<ssize_t>(payload.size()));
  CHECK(json::parse(raw_read_line(fd))["error"] == "parse");
  const json meta = json::parse(raw_read_line(fd));
  CHECK(meta["id"] == 9);
  CHECK(meta["classes"] == 2);
  ::close(fd);
  server.stop();
}

TEST_CASE("a dead endpoint fails with the retry count") {
  // discard port on loopback: connection refused immediately
  CHECK_THROWS_WITH_AS(SocketBlackBox("127.0.0.1:9", 0),
                       doctest::Contains("after 0 retries"),
                       std::runtime_error);
}

TEST_CASE("a server that talks garbage is a protocol error") {
  const int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(listen_fd >= 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0);
  REQUIRE(::listen(listen_fd, 1) == 0);
  socklen_t len = sizeof sa;
  ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&sa), &len);
  std::thread impostor([listen_fd] {
    const int fd = ::accept(listen_fd, nullptr, nullptr);
    if (fd < 0) return;
    const char junk[] = "not json\n";
    (void)!::write(fd, junk, sizeof junk - 1);
    ::close(fd);
  });
  const std::string addr =
      "127.0.0.1:" + std::to_string(ntohs(sa.sin_port));
  CHECK_THROWS_WITH_AS(SocketBlackBox(addr, 0),
                       doctest::Contains("protocol error"), std::runtime_error);
  impostor.join();
  ::close(listen_fd);
}

TEST_CASE("binding an occupied port fails loudly") {
  BlackBoxServer first(zero_net(2, 2), "127.0.0.1:0");
  CHECK_THROWS_WITH_AS(
      BlackBoxServer(zero_net(2, 2), "127.0.0.1:" + std::to_string(first.port())),
      doctest::Contains("cannot bind"), std::runtime_error);
  first.stop();
}

TEST_CASE("addresses must be host:port") {
  CHECK_THROWS_AS(BlackBoxServer(zero_net(2, 2), "nocolon"),
                  std::invalid_argument);
  CHECK_THROWS_AS(SocketBlackBox("host:notaport"), std::invalid_argument);
  CHECK_THROWS_AS(SocketBlackBox("host:99999"), std::invalid_argument);
}

TEST_CASE("pipe transport matches the in-process labels bit for bit") {
  MlpClassifier model(2, {6}, 3, 42);
  PipeBlackBox pipe_box(model);
  InProcessBlackBox local(model.clone());
  CHECK(pipe_box.transport() == "pipe");
  CHECK(pipe_box.num_classes() == 3);
  CHECK(pipe_box.input_width() == 2);

  Rng rng(3);
  Tensor batch = Tensor::zeros({300, 2});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.at(i) = rng.normal();
  CHECK(pipe_box.predict_hard(batch) == local.predict_hard(batch));
}

TEST_CASE("source training separates blobs") {
  LabeledVectorSet train = blob_pair(200, 21);
  LabeledVectorSet held_out = blob_pair(100, 22);
  SourceTrainConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 15;
  cfg.seed = 5;
  SourceTrainStats stats;
  MlpClassifier net = train_source_model(train, cfg, &stats);

  CHECK(stats.epoch_ce.size() == 15);
  CHECK(stats.epoch_ce.back() < stats.epoch_ce.front());
  CHECK(stats.train_accuracy >= 0.95);

  const std::vector<int> pred = net.predict(held_out.features());
  const std::vector<int>& truth = held_out.supervised_labels();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) ++hits;
  }
  CHECK(static_cast<double>(hits) / 100.0 >= 0.95);

  // the planted model reproduces its own training labels through the handle
  InProcessBlackBox box(net.clone());
  const std::vector<int> replay = box.predict_hard(train.features());
  std::size_t agree = 0;
  for (std::size_t i = 0; i < replay.size(); ++i) {
    if (replay[i] == train.supervised_labels()[i]) ++agree;
  }
  CHECK(static_cast<double>(agree) / 200.0 >= 0.95);
}

TEST_CASE("zero training epochs leave the net at chance") {
  LabeledVectorSet set = random_labels(400, 31);
  SourceTrainConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 0;
  SourceTrainStats stats;
  MlpClassifier net = train_source_model(set, cfg, &stats);
  CHECK(stats.epoch_ce.empty());
  CHECK(stats.train_accuracy >= 0.35);
  CHECK(stats.train_accuracy <= 0.65);
  CHECK(net.layer_count() == 2);
}

TEST_CASE("degenerate source sets are configuration errors") {
  Tensor x = Tensor::matrix(3, 2, {0.0, 0.0, 1.0, 1.0, 2.0, 2.0});
  LabeledVectorSet single(Domain::source, x, {1, 1, 1});
  CHECK_THROWS_AS(train_source_model(single, SourceTrainConfig{}),
                  std::invalid_argument);

  LabeledVectorSet overflow(Domain::source, x, {0, 1, 2});
  SourceTrainConfig two_class;
  two_class.num_classes = 2;
  CHECK_THROWS_AS(train_source_model(overflow, two_class),
                  std::invalid_argument);

  LabeledVectorSet unlabeled(Domain::source, x);
  CHECK_THROWS_AS(train_source_model(unlabeled, SourceTrainConfig{}),
                  std::logic_error);
}
