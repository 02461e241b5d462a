#include "beta/blackbox.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "beta/losses.hpp"
#include "beta/rng.hpp"

namespace beta {

namespace {

using nlohmann::json;

// Broken peers must surface as error codes, not SIGPIPE.
void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

// Recoverable stream failure: the chunk can be resent on a new connection.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool read_line_fd(int fd, std::string& buf, std::string& line) {
  for (;;) {
    const std::size_t pos = buf.find('\n');
    if (pos != std::string::npos) {
      line.assign(buf, 0, pos);
      buf.erase(0, pos + 1);
      return true;
    }
    char tmp[4096];
    const ssize_t n = ::read(fd, tmp, sizeof tmp);
    if (n <= 0) return false;
    buf.append(tmp, static_cast<std::size_t>(n));
  }
}

bool write_all_fd(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

struct HostPort {
  std::string host;
  int port = 0;
};

HostPort split_address(const std::string& address) {
  const std::size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 ||
      colon + 1 == address.size()) {
    throw std::invalid_argument("address must be host:port, got '" + address +
                                "'");
  }
  HostPort hp;
  hp.host = address.substr(0, colon);
  const std::string port_text = address.substr(colon + 1);
  std::size_t used = 0;
  int port = 0;
  try {
    port = std::stoi(port_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port_text.size() || port < 0 || port > 65535) {
    throw std::invalid_argument("bad port in address '" + address + "'");
  }
  hp.port = port;
  return hp;
}

int connect_to(const std::string& address) {
  const HostPort hp = split_address(address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(hp.host.c_str(), std::to_string(hp.port).c_str(),
                               &hints, &res);
  if (rc != 0) {
    throw TransportError("cannot resolve " + address + ": " +
                         gai_strerror(rc));
  }
  int fd = -1;
  int err = 0;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      err = errno;
      continue;
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    err = errno;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw TransportError("cannot connect to " + address + ": " +
                         std::strerror(err));
  }
  return fd;
}

// Pipelines one chunk of rows and matches responses by id. Throws
// TransportError when the stream breaks (resendable) and runtime_error on
// protocol violations (not resendable).
std::vector<int> ndjson_query(int write_fd, int read_fd, std::string& read_buf,
                              std::uint64_t& next_id, const Tensor& batch,
                              std::size_t row_begin, std::size_t row_end,
                              std::size_t num_classes) {
  std::string blob;
  std::unordered_map<std::uint64_t, std::size_t> pending;
  for (std::size_t r = row_begin; r < row_end; ++r) {
    json req;
    req["id"] = next_id;
    json x = json::array();
    for (std::size_t c = 0; c < batch.cols(); ++c) x.push_back(batch.at(r, c));
    req["x"] = std::move(x);
    pending.emplace(next_id, r - row_begin);
    ++next_id;
    blob += req.dump();
    blob += '\n';
  }
  if (!write_all_fd(write_fd, blob)) throw TransportError("send failed");

  std::vector<int> labels(row_end - row_begin, -1);
  std::string line;
  while (!pending.empty()) {
    if (!read_line_fd(read_fd, read_buf, line)) {
      throw TransportError("stream closed with " +
                           std::to_string(pending.size()) +
                           " responses outstanding");
    }
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
        !j["id"].is_number_integer()) {
      throw std::runtime_error("protocol error: unparseable response: " + line);
    }
    const std::uint64_t id = j["id"].get<std::uint64_t>();
    const auto it = pending.find(id);
    if (it == pending.end()) {
      throw std::runtime_error("protocol error: unexpected response id " +
                               std::to_string(id));
    }
    if (j.contains("error")) {
      const json& e = j["error"];
      throw std::runtime_error("protocol error: server answered '" +
                               (e.is_string() ? e.get<std::string>() : e.dump()) +
                               "'");
    }
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw std::runtime_error("protocol error: response has no label: " +
                               line);
    }
    const int label = j["label"].get<int>();
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::runtime_error("protocol error: label " +
                               std::to_string(label) + " outside 0.." +
                               std::to_string(num_classes - 1));
    }
    labels[it->second] = label;
    pending.erase(it);
  }
  return labels;
}

void ndjson_handshake(int write_fd, int read_fd, std::string& read_buf,
                      std::uint64_t& next_id, std::size_t& num_classes,
                      std::size_t& input_width) {
  json req;
  req["id"] = next_id++;
  req["meta"] = true;
  if (!write_all_fd(write_fd, req.dump() + "\n")) {
    throw TransportError("handshake send failed");
  }
  std::string line;
  if (!read_line_fd(read_fd, read_buf, line)) {
    throw TransportError("handshake got no response");
  }
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("classes") ||
      !j["classes"].is_number_unsigned() || !j.contains("width") ||
      !j["width"].is_number_unsigned()) {
    throw std::runtime_error("protocol error: bad handshake response: " + line);
  }
  num_classes = j["classes"].get<std::size_t>();
  input_width = j["width"].get<std::size_t>();
  if (num_classes == 0 || input_width == 0) {
    throw std::runtime_error("protocol error: degenerate model shape");
  }
}

constexpr std::size_t kChunkRows = 256;

}  // namespace

std::vector<int> BlackBoxHandle::predict_hard(const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != input_width()) {
    throw std::invalid_argument("predict_hard: batch is " + batch.shape_str() +
                                ", handle expects width " +
                                std::to_string(input_width()));
  }
  queries_ += batch.rows();
  return predict_rows(batch);
}

std::string handle_request(const MlpClassifier& model,
                           const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
      !j["id"].is_number_integer()) {
    return R"({"error":"parse"})";
  }
  json resp;
  resp["id"] = j["id"];
  if (j.contains("meta") && j["meta"].is_boolean() && j["meta"].get<bool>()) {
    resp["classes"] = model.num_classes();
    resp["width"] = model.input_width();
    return resp.dump();
  }
  if (!j.contains("x") || !j["x"].is_array()) {
    resp["error"] = "parse";
    return resp.dump();
  }
  const json& x = j["x"];
  if (x.size() != model.input_width()) {
    resp["error"] = "dim";
    return resp.dump();
  }
  std::vector<double> row;
  row.reserve(x.size());
  for (const json& v : x) {
    if (!v.is_number()) {
      resp["error"] = "parse";
      return resp.dump();
    }
    row.push_back(v.get<double>());
  }
  const std::size_t width = row.size();
  resp["label"] = model.predict(Tensor::matrix(1, width, std::move(row)))[0];
  return resp.dump();
}

void serve_stream(const MlpClassifier& model, std::istream& in,
                  std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    out << handle_request(model, line) << '\n';
    out.flush();
  }
}

BlackBoxServer::BlackBoxServer(MlpClassifier model,
                               const std::string& listen_address)
    : model_(std::move(model)) {
  ignore_sigpipe();
  const HostPort hp = split_address(listen_address);
  host_ = hp.host;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(hp.host.c_str(), std::to_string(hp.port).c_str(),
                               &hints, &res);
  if (rc != 0) {
    throw std::runtime_error("cannot resolve " + listen_address + ": " +
                             gai_strerror(rc));
  }
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (listen_fd_ < 0) {
    ::freeaddrinfo(res);
    throw std::runtime_error(std::string("socket failed: ") +
                             std::strerror(errno));
  }
  const int reuse = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &reuse, sizeof reuse);
  if (::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const int err = errno;
    ::freeaddrinfo(res);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("cannot bind " + listen_address + ": " +
                             std::strerror(err));
  }
  ::freeaddrinfo(res);

  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);

  accept_thread_ = std::thread(&BlackBoxServer::accept_loop, this);
}

BlackBoxServer::~BlackBoxServer() { stop(); }

std::string BlackBoxServer::address() const {
  return host_ + ":" + std::to_string(port_);
}

void BlackBoxServer::accept_loop() {
  for (;;) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR && !stopping_) continue;
      return;
    }
    std::lock_guard<std::mutex> lock(mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    open_fds_.push_back(fd);
    workers_.emplace_back(&BlackBoxServer::connection_loop, this, fd);
  }
}

void BlackBoxServer::connection_loop(int fd) {
  std::string buf, line;
  while (read_line_fd(fd, buf, line)) {
    if (!write_all_fd(fd, handle_request(model_, line) + "\n")) break;
  }
  std::lock_guard<std::mutex> lock(mu_);
  open_fds_.erase(std::find(open_fds_.begin(), open_fds_.end(), fd));
  ::close(fd);
}

void BlackBoxServer::stop() {
  if (stopping_.exchange(true)) {
    if (accept_thread_.joinable()) accept_thread_.join();
    return;
  }
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(mu_);
    workers.swap(workers_);
  }
  for (std::thread& t : workers) t.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

SocketBlackBox::SocketBlackBox(std::string address, int max_retries)
    : address_(std::move(address)), max_retries_(max_retries) {
  if (max_retries_ < 0) {
    throw std::invalid_argument("max_retries must be non-negative");
  }
  ignore_sigpipe();
  for (int attempt = 0;; ++attempt) {
    try {
      reconnect();
      ndjson_handshake(fd_, fd_, read_buf_, next_id_, num_classes_,
                       input_width_);
      return;
    } catch (const TransportError& e) {
      if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
      }
      if (attempt >= max_retries_) {
        throw std::runtime_error("query error after " +
                                 std::to_string(max_retries_) +
                                 " retries: " + e.what());
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
}

SocketBlackBox::~SocketBlackBox() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketBlackBox::reconnect() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  read_buf_.clear();
  fd_ = connect_to(address_);
}

std::vector<int> SocketBlackBox::predict_rows(const Tensor& batch) {
  std::vector<int> out;
  out.reserve(batch.rows());
  for (std::size_t start = 0; start < batch.rows(); start += kChunkRows) {
    const std::size_t end = std::min(batch.rows(), start + kChunkRows);
    for (int attempt = 0;; ++attempt) {
      try {
        if (fd_ < 0) reconnect();
        std::vector<int> labels = ndjson_query(fd_, fd_, read_buf_, next_id_,
                                               batch, start, end, num_classes_);
        out.insert(out.end(), labels.begin(), labels.end());
        break;
      } catch (const TransportError& e) {
        if (fd_ >= 0) {
          ::close(fd_);
          fd_ = -1;
        }
        if (attempt >= max_retries_) {
          throw std::runtime_error("query error after " +
                                   std::to_string(max_retries_) +
                                   " retries: " + e.what());
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    }
  }
  return out;
}

PipeBlackBox::PipeBlackBox(const MlpClassifier& model) {
  ignore_sigpipe();
  int to_child[2] = {-1, -1};
  int from_child[2] = {-1, -1};
  if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
    throw std::runtime_error(std::string("pipe failed: ") +
                             std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    throw std::runtime_error(std::string("fork failed: ") +
                             std::strerror(errno));
  }
  if (pid == 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    std::string buf, line;
    while (read_line_fd(to_child[0], buf, line)) {
      if (!write_all_fd(from_child[1], handle_request(model, line) + "\n")) {
        break;
      }
    }
    std::_Exit(0);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  child_pid_ = pid;
  try {
    ndjson_handshake(to_child_, from_child_, read_buf_, next_id_, num_classes_,
                     input_width_);
  } catch (const TransportError& e) {
    throw std::runtime_error(std::string("pipe handshake failed: ") + e.what());
  }
}

PipeBlackBox::~PipeBlackBox() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(static_cast<pid_t>(child_pid_), &status, 0);
  }
}

std::vector<int> PipeBlackBox::predict_rows(const Tensor& batch) {
  std::vector<int> out;
  out.reserve(batch.rows());
  for (std::size_t start = 0; start < batch.rows(); start += kChunkRows) {
    const std::size_t end = std::min(batch.rows(), start + kChunkRows);
    try {
      std::vector<int> labels = ndjson_query(to_child_, from_child_, read_buf_,
                                             next_id_, batch, start, end,
                                             num_classes_);
      out.insert(out.end(), labels.begin(), labels.end());
    } catch (const TransportError& e) {
      throw std::runtime_error("query error after 0 retries: " +
                               std::string(e.what()));
    }
  }
  return out;
}

MlpClassifier train_source_model(const LabeledVectorSet& source,
                                 const SourceTrainConfig& config,
                                 SourceTrainStats* stats) {
  const std::vector<int>& labels = source.supervised_labels();
  if (labels.empty()) {
    throw std::invalid_argument("train_source_model: source set is unlabeled");
  }
  const std::size_t inferred = source.label_classes();
  const std::size_t k =
      config.num_classes != 0 ? config.num_classes : inferred;
  if (inferred > k) {
    throw std::invalid_argument(
        "train_source_model: labels reach " + std::to_string(inferred - 1) +
        " but the model is configured for 0.." + std::to_string(k - 1));
  }
  std::vector<char> seen(k, 0);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) {
    throw std::invalid_argument(
        "train_source_model: need at least 2 classes in the source set");
  }
  if (config.batch_size == 0) {
    throw std::invalid_argument("train_source_model: batch_size must be >= 1");
  }

  MlpClassifier net(source.dim(), config.hidden, k, config.seed);
  SgdState sgd(net, config.sgd);
  const Tensor targets = one_hot(labels, k);
  const std::size_t n = source.size();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0x50c1, epoch));
    const std::vector<std::size_t> perm = rng.permutation(n);
    double ce_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::vector<std::size_t> rows(perm.begin() + start,
                                          perm.begin() + end);
      const ad::Var lp = ad::log_softmax_rows(
          net.forward_logits(source.features().gather_rows(rows)));
      const ad::Var loss = cross_entropy(lp, targets.gather_rows(rows));
      ad::backward(loss);
      sgd.step(net);
      ce_sum += loss.scalar();
      ++batches;
    }
    if (stats != nullptr && batches > 0) {
      stats->epoch_ce.push_back(ce_sum / static_cast<double>(batches));
    }
  }

  if (stats != nullptr) {
    const std::vector<int> pred = net.predict(source.features());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pred[i] == labels[i]) ++hits;
    }
    stats->train_accuracy = n > 0 ? static_cast<double>(hits) /
                                        static_cast<double>(n)
                                  : 0.0;
  }
  return net;
}

}  // namespace beta
