#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beta/autodiff.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Fully-connected classifier: input d -> hidden... -> K, ReLU between
// layers, softmax applied by the loss side. Doubles throughout.
class MlpClassifier {
 public:
  MlpClassifier() = default;
  // He-style uniform init scaled by fan-in, seeded.
  MlpClassifier(std::size_t input_width, const std::vector<std::size_t>& hidden,
                std::size_t num_classes, std::uint64_t seed);

  std::size_t input_width() const { return widths_.front(); }
  std::size_t num_classes() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t layer_count() const { return weights_.size(); }

  // Graph-building forward; returns logits (N, K).
  ad::Var forward_logits(const ad::Var& batch) const;
  ad::Var forward_logits(const Tensor& batch) const;

  // Plain forward with no graph: softmax probabilities, rows on the simplex.
  Tensor forward(const Tensor& batch) const;
  // Argmax per row; ties broken by lowest class index.
  std::vector<int> predict(const Tensor& batch) const;

  std::vector<ad::Var>& parameters() { return params_; }
  const std::vector<ad::Var>& parameters() const { return params_; }
  // Index of the first parameter of the final (head) layer.
  std::size_t head_param_offset() const { return 2 * (weights_.size() - 1); }

  ad::Var weight(std::size_t layer) const { return weights_[layer]; }
  ad::Var bias(std::size_t layer) const { return biases_[layer]; }

  // Deep copy with independent parameter storage.
  MlpClassifier clone() const;

  // L2 distance between all parameters of two same-shape nets.
  static double parameter_distance(const MlpClassifier& a, const MlpClassifier& b);
  static bool parameters_equal(const MlpClassifier& a, const MlpClassifier& b);

 private:
  void rebuild_param_list();

  std::vector<std::size_t> widths_;
  std::vector<ad::Var> weights_;  // (in, out) per layer
  std::vector<ad::Var> biases_;   // (1, out) per layer
  std::vector<ad::Var> params_;   // weights/biases interleaved per layer
};

struct SgdConfig {
  double lr_body = 1e-3;  // hidden layers
  double lr_head = 1e-2;  // final layer
  double momentum = 0.9;
  double weight_decay = 1e-3;  // decoupled
};

// Momentum SGD with decoupled weight decay; one velocity buffer per
// parameter tensor, per-group learning rates (body vs head).
class SgdState {
 public:
  SgdState() = default;
  SgdState(const MlpClassifier& net, SgdConfig config);

  // Applies one update from accumulated gradients, then clears them.
  void step(MlpClassifier& net);
  void scale_learning_rate(double factor);
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<Tensor> velocity_;
  std::size_t head_offset_ = 0;
};

// Flat binary checkpoint: magic "BETA-CKPT\0", version u32, layer count
// u32, per-layer (rows, cols) u32 headers, little-endian f64 payload
// (weights row-major, then bias).
void checkpoint_save(const MlpClassifier& net, const std::string& path);
MlpClassifier checkpoint_load(const std::string& path);
// Validates shapes against an existing net; names the offending layer.
void checkpoint_load_into(MlpClassifier& net, const std::string& path);

}  // namespace beta
