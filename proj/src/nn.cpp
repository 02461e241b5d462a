#include "beta/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "beta/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace beta {

MlpClassifier::MlpClassifier(std::size_t input_width,
                             const std::vector<std::size_t>& hidden,
                             std::size_t num_classes, std::uint64_t seed) {
  if (input_width == 0 || num_classes < 2) {
    throw std::invalid_argument("MlpClassifier: need input width >= 1 and >= 2 classes");
  }
  widths_.push_back(input_width);
  for (std::size_t h : hidden) widths_.push_back(h);
  widths_.push_back(num_classes);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t fan_in = widths_[l], fan_out = widths_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = rng.uniform(-limit, limit);
    weights_.push_back(ad::Var::param(std::move(w)));
    biases_.push_back(ad::Var::param(Tensor::zeros({1, fan_out})));
  }
  rebuild_param_list();
}

void MlpClassifier::rebuild_param_list() {
  params_.clear();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    params_.push_back(weights_[l]);
    params_.push_back(biases_[l]);
  }
}

ad::Var MlpClassifier::forward_logits(const ad::Var& batch) const {
  if (batch.value().rank() != 2 || batch.value().cols() != input_width()) {
    throw std::invalid_argument("forward: batch shape " + batch.value().shape_str() +
                                " does not match input width " +
                                std::to_string(input_width()));
  }
  ad::Var h = batch;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::add_rowwise(ad::matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = ad::relu(h);
  }
  return h;
}

ad::Var MlpClassifier::forward_logits(const Tensor& batch) const {
  return forward_logits(ad::Var::constant(batch));
}

Tensor MlpClassifier::forward(const Tensor& batch) const {
  ad::Var lp = ad::log_softmax_rows(forward_logits(batch));
  Tensor probs = lp.value();
  for (std::size_t i = 0; i < probs.size(); ++i) probs.at(i) = std::exp(probs.at(i));
  return probs;
}

std::vector<int> MlpClassifier::predict(const Tensor& batch) const {
  Tensor probs = forward(batch);
  std::vector<int> labels(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

MlpClassifier MlpClassifier::clone() const {
  MlpClassifier copy;
  copy.widths_ = widths_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    copy.weights_.push_back(ad::Var::param(weights_[l].value()));
    copy.biases_.push_back(ad::Var::param(biases_[l].value()));
  }
  copy.rebuild_param_list();
  return copy;
}

double MlpClassifier::parameter_distance(const MlpClassifier& a,
                                         const MlpClassifier& b) {
  if (a.widths_ != b.widths_) {
    throw std::invalid_argument("parameter_distance: architecture mismatch");
  }
  double sq = 0.0;
  for (std::size_t p = 0; p < a.params_.size(); ++p) {
    const Tensor& ta = a.params_[p].value();
    const Tensor& tb = b.params_[p].value();
    for (std::size_t i = 0; i < ta.size(); ++i) {
      const double d = ta.at(i) - tb.at(i);
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

bool MlpClassifier::parameters_equal(const MlpClassifier& a, const MlpClassifier& b) {
  if (a.widths_ != b.widths_) return false;
  for (std::size_t p = 0; p < a.params_.size(); ++p) {
    const Tensor& ta = a.params_[p].value();
    const Tensor& tb = b.params_[p].value();
    if (std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

SgdState::SgdState(const MlpClassifier& net, SgdConfig config)
    : config_(config), head_offset_(net.head_param_offset()) {
  if (config_.lr_body <= 0 || config_.lr_head <= 0) {
    throw std::invalid_argument("SgdState: learning rates must be positive");
  }
  if (config_.momentum < 0 || config_.weight_decay < 0) {
    throw std::invalid_argument("SgdState: momentum/weight decay must be non-negative");
  }
  for (const auto& p : net.parameters())
    velocity_.push_back(Tensor::zeros(p.value().shape()));
}

void SgdState::step(MlpClassifier& net) {
  auto& params = net.parameters();
  if (params.size() != velocity_.size()) {
    throw std::invalid_argument("SgdState: parameter count changed under optimizer");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) {
      throw std::logic_error("SgdState::step: no recorded gradient for parameter " +
                             std::to_string(p));
    }
    const double lr = p >= head_offset_ ? config_.lr_head : config_.lr_body;
    Tensor& g = params[p].grad();
    Tensor& v = velocity_[p];
    Tensor& w = params[p].mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v.at(i) = config_.momentum * v.at(i) + g.at(i);
      w.at(i) -= lr * v.at(i) + lr * config_.weight_decay * w.at(i);
    }
    params[p].clear_grad();
  }
}

void SgdState::scale_learning_rate(double factor) {
  config_.lr_body *= factor;
  config_.lr_head *= factor;
}

namespace {

constexpr char kMagic[10] = {'B', 'E', 'T', 'A', '-', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("checkpoint truncated: " + path);
  return v;
}

}  // namespace

void checkpoint_save(const MlpClassifier& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(net.layer_count()));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const Tensor& w = net.weight(l).value();
    write_u32(out, static_cast<std::uint32_t>(w.rows()));
    write_u32(out, static_cast<std::uint32_t>(w.cols()));
    out.write(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(double));
    const Tensor& b = net.bias(l).value();
    out.write(reinterpret_cast<const char*>(b.data()), b.size() * sizeof(double));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

namespace {

// Parses the full file into (widths, weight tensors, bias tensors); throws
// before returning anything partial.
struct RawCheckpoint {
  std::vector<std::size_t> widths;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

RawCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a BETA checkpoint: " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + ": " + path);
  }
  const std::uint32_t layers = read_u32(in, path);
  if (layers == 0 || layers > 64) {
    throw std::runtime_error("implausible layer count in checkpoint: " + path);
  }
  RawCheckpoint raw;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint32_t rows = read_u32(in, path);
    const std::uint32_t cols = read_u32(in, path);
    if (rows == 0 || cols == 0) {
      throw std::runtime_error("empty layer " + std::to_string(l) +
                               " in checkpoint: " + path);
    }
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(w.data()), w.size() * sizeof(double));
    std::vector<double> b(cols);
    in.read(reinterpret_cast<char*>(b.data()), b.size() * sizeof(double));
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    if (l == 0) raw.widths.push_back(rows);
    if (!raw.widths.empty() && raw.widths.back() != rows) {
      throw std::runtime_error("layer " + std::to_string(l) +
                               " input width does not chain in checkpoint: " + path);
    }
    raw.widths.push_back(cols);
    raw.weights.emplace_back(std::vector<std::size_t>{rows, cols}, std::move(w));
    raw.biases.emplace_back(std::vector<std::size_t>{1, cols}, std::move(b));
  }
  in.peek();
  if (!in.eof()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  return raw;
}

}  // namespace

MlpClassifier checkpoint_load(const std::string& path) {
  RawCheckpoint raw = read_checkpoint(path);
  std::vector<std::size_t> hidden(raw.widths.begin() + 1, raw.widths.end() - 1);
  MlpClassifier net(raw.widths.front(), hidden, raw.widths.back(), /*seed=*/0);
  for (std::size_t l = 0; l < raw.weights.size(); ++l) {
    net.weight(l).mutable_value() = std::move(raw.weights[l]);
    net.bias(l).mutable_value() = std::move(raw.biases[l]);
  }
  return net;
}

void checkpoint_load_into(MlpClassifier& net, const std::string& path) {
  RawCheckpoint raw = read_checkpoint(path);
  if (raw.weights.size() != net.layer_count()) {
    throw std::runtime_error("checkpoint has " + std::to_string(raw.weights.size()) +
                             " layers, net has " + std::to_string(net.layer_count()));
  }
  for (std::size_t l = 0; l < raw.weights.size(); ++l) {
    if (!raw.weights[l].same_shape(net.weight(l).value())) {
      throw std::runtime_error("layer " + std::to_string(l) + " shape " +
                               raw.weights[l].shape_str() + " does not match net " +
                               net.weight(l).value().shape_str());
    }
  }
  for (std::size_t l = 0; l < raw.weights.size(); ++l) {
    net.weight(l).mutable_value() = std::move(raw.weights[l]);
    net.bias(l).mutable_value() = std::move(raw.biases[l]);
  }
}

}  // namespace beta
