#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "beta/tensor.hpp"

namespace beta {

enum class Domain { source, target };

struct DiagnosticsAccess;

// Feature matrix plus bookkeeping columns. Ground-truth labels of a target
// set are deliberately locked away from the training path: they can only be
// read through supervised_labels() (source domain) or DiagnosticsAccess
// (error measurement).
class LabeledVectorSet {
 public:
  LabeledVectorSet(Domain domain, Tensor features);
  LabeledVectorSet(Domain domain, Tensor features, std::vector<int> true_labels);

  Domain domain() const { return domain_; }
  std::size_t size() const { return features_.rows(); }
  std::size_t dim() const { return features_.cols(); }
  const Tensor& features() const { return features_; }
  Tensor& mutable_features() { return features_; }

  bool has_true_labels() const { return !true_labels_.empty(); }
  // Training-path label access; refuses to hand out target-domain truth.
  const std::vector<int>& supervised_labels() const;
  // Largest stored label + 1; 0 when unlabeled.
  std::size_t label_classes() const;

  bool has_pseudo_labels() const { return pseudo_labels_.has_value(); }
  const Tensor& pseudo_labels() const;
  void set_pseudo_labels(Tensor soft);  // rows must sum to 1 +- 1e-9

  bool has_clean_prob() const { return !clean_prob_.empty(); }
  const std::vector<double>& clean_prob() const { return clean_prob_; }
  void set_clean_prob(std::vector<double> p);  // entries in [0,1]

 private:
  friend struct DiagnosticsAccess;

  Domain domain_;
  Tensor features_;
  std::vector<int> true_labels_;
  std::optional<Tensor> pseudo_labels_;
  std::vector<double> clean_prob_;
};

// Measurement-only window onto ground truth (noise ratios, accuracy).
struct DiagnosticsAccess {
  static const std::vector<int>& true_labels(const LabeledVectorSet& set);
};

// Two interleaved half-circle arcs: class 0 on the unit circle's upper
// half, class 1 on an upper half-circle centered at (1, -0.5). Gaussian
// jitter of noise_sigma, then a rotation about the origin as the domain
// shift. Balanced, shuffled, pure in (params, seed).
LabeledVectorSet gen_two_moons(std::size_t n, double noise_sigma,
                               double rotation_deg, std::uint64_t seed,
                               Domain domain);

// K unit-variance Gaussian blobs in d dimensions; the target copy translates
// each class mean by mean_shift along a fixed per-class random direction.
std::pair<LabeledVectorSet, LabeledVectorSet> gen_gaussian_shift(
    std::size_t n, std::size_t d, std::size_t num_classes, double mean_shift,
    std::uint64_t seed);

// Rectangular numeric CSV with a header row. When label_column is empty a
// column literally named "label" is used if present; otherwise the set is
// unlabeled. Parse failures cite the 1-based file line.
LabeledVectorSet load_csv(const std::string& path,
                          const std::string& label_column = "",
                          Domain domain = Domain::target);

void save_csv(const LabeledVectorSet& set, const std::string& path,
              bool include_labels);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-12
};

ColumnStats feature_stats(const Tensor& features);
// (x - mean) / stddev per column; stats must come from the source domain.
void standardize_inplace(LabeledVectorSet& set, const ColumnStats& stats);

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes);

}  // namespace beta
