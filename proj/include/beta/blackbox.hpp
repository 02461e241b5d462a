#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "beta/data.hpp"
#include "beta/nn.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Hard-label query interface to the frozen source predictor. Downstream
// code sees labels in 0..K-1 and a query counter; there is no access path
// to probabilities or parameters.
class BlackBoxHandle {
 public:
  virtual ~BlackBoxHandle() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_width() const = 0;
  virtual std::string transport() const = 0;

  // One hard label per row; deterministic, ties resolve to the lowest
  // class index. Feature width must match input_width().
  std::vector<int> predict_hard(const Tensor& batch);

  // Samples sent so far, i.e. billable API calls.
  std::uint64_t queries() const { return queries_; }

 protected:
  virtual std::vector<int> predict_rows(const Tensor& batch) = 0;

 private:
  std::uint64_t queries_ = 0;
};

class InProcessBlackBox final : public BlackBoxHandle {
 public:
  explicit InProcessBlackBox(MlpClassifier model) : model_(std::move(model)) {}

  std::size_t num_classes() const override { return model_.num_classes(); }
  std::size_t input_width() const override { return model_.input_width(); }
  std::string transport() const override { return "in-process"; }

 protected:
  std::vector<int> predict_rows(const Tensor& batch) override {
    return model_.predict(batch);
  }

 private:
  MlpClassifier model_;
};

// One NDJSON request line -> one response line (no trailing newline).
// {"id":n,"x":[...]} -> {"id":n,"label":k}; wrong width -> {"id":n,
// "error":"dim"}; anything unparseable -> {"error":"parse"} so the
// connection can stay open. {"id":n,"meta":true} answers class count and
// feature width.
std::string handle_request(const MlpClassifier& model, const std::string& line);

// Request loop over text streams, one JSON object per line; returns at EOF.
void serve_stream(const MlpClassifier& model, std::istream& in,
                  std::ostream& out);

// TCP front end; accepts until stopped, one thread per connection. Pass
// port 0 to bind an ephemeral port and read it back with port().
class BlackBoxServer {
 public:
  BlackBoxServer(MlpClassifier model, const std::string& listen_address);
  ~BlackBoxServer();

  BlackBoxServer(const BlackBoxServer&) = delete;
  BlackBoxServer& operator=(const BlackBoxServer&) = delete;

  int port() const { return port_; }
  std::string address() const;
  void stop();

 private:
  void accept_loop();
  void connection_loop(int fd);

  MlpClassifier model_;
  std::string host_;
  int port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<int> open_fds_;
  std::vector<std::thread> workers_;
};

// Client over a stream socket speaking the NDJSON protocol. Requests are
// pipelined in chunks and matched by id; a broken stream reconnects and
// resends the chunk up to max_retries times. Class count and width come
// from a meta handshake at construction.
class SocketBlackBox final : public BlackBoxHandle {
 public:
  explicit SocketBlackBox(std::string address, int max_retries = 3);
  ~SocketBlackBox() override;

  std::size_t num_classes() const override { return num_classes_; }
  std::size_t input_width() const override { return input_width_; }
  std::string transport() const override { return "socket"; }

 protected:
  std::vector<int> predict_rows(const Tensor& batch) override;

 private:
  void reconnect();
  std::vector<int> query_chunk(const Tensor& batch,
                               const std::vector<std::size_t>& rows);

  std::string address_;
  int max_retries_;
  int fd_ = -1;
  std::string read_buf_;
  std::uint64_t next_id_ = 1;
  std::size_t num_classes_ = 0;
  std::size_t input_width_ = 0;
};

// Serves the model from a forked child over a pipe pair, NDJSON both ways.
// Same protocol and chunking as the socket client.
class PipeBlackBox final : public BlackBoxHandle {
 public:
  explicit PipeBlackBox(const MlpClassifier& model);
  ~PipeBlackBox() override;

  std::size_t num_classes() const override { return num_classes_; }
  std::size_t input_width() const override { return input_width_; }
  std::string transport() const override { return "pipe"; }

 protected:
  std::vector<int> predict_rows(const Tensor& batch) override;

 private:
  int to_child_ = -1;
  int from_child_ = -1;
  std::string read_buf_;
  std::uint64_t next_id_ = 1;
  long child_pid_ = -1;
  std::size_t num_classes_ = 0;
  std::size_t input_width_ = 0;
};

struct SourceTrainConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t num_classes = 0;  // 0: largest label + 1
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  SgdConfig sgd{};
  std::uint64_t seed = 1;
};

struct SourceTrainStats {
  std::vector<double> epoch_ce;  // mean nats per epoch
  double train_accuracy = 0.0;
};

// Supervised cross-entropy training on the labeled source split. The
// returned net is what gets frozen behind a BlackBoxHandle.
MlpClassifier train_source_model(const LabeledVectorSet& source,
                                 const SourceTrainConfig& config,
                                 SourceTrainStats* stats = nullptr);

}  // namespace beta
