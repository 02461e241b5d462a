#pragma once

#include <vector>

#include "beta/nn.hpp"
#include "beta/rng.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Vector-space stand-ins for image augmentation: weak = small Gaussian
// jitter, strong = larger jitter plus per-feature dropout and a per-sample
// global scale.
struct AugmentationPolicy {
  double sigma_weak = 0.05;
  double sigma_strong = 0.2;
  double dropout = 0.1;      // strong views only
  double scale_lo = 0.8;     // strong views only
  double scale_hi = 1.2;
  std::size_t views = 2;     // M

  void validate() const;  // sigma_weak < sigma_strong, dropout in [0,1), M >= 1

  // Scales the default sigmas by the mean per-column standard deviation.
  static AugmentationPolicy for_features(const Tensor& features);
};

enum class AugKind { weak, strong };

Tensor augment(const Tensor& x, AugKind kind, const AugmentationPolicy& policy,
               Rng& rng);

// Easy-label refinement: rho * one-hot pseudo label + (1 - rho) * mean of
// the twin network's predictions over M augmented views (views alternate
// weak/strong).
Tensor refine_easy(const MlpClassifier& net_other, const Tensor& easy_features,
                   const Tensor& easy_one_hot,
                   const std::vector<double>& clean_prob,
                   const AugmentationPolicy& policy, Rng& rng);

// Hard-label co-guessing: mean of both networks' predictions over M weak
// views each (2M predictions per sample). Sharpening is applied separately.
Tensor co_guess_hard(const MlpClassifier& net_a, const MlpClassifier& net_b,
                     const Tensor& hard_features,
                     const AugmentationPolicy& policy, Rng& rng);

// Temperature sharpening p^(1/T) per row, renormalized. T > 0.
Tensor sharpen(const Tensor& soft_rows, double temperature);

struct MixedBatch {
  Tensor features;
  Tensor targets;
  std::vector<double> lambdas;  // each in [0.5, 1]
};

// MixMatch-style Mixup: each primary sample is mixed with a uniformly drawn
// pool partner using lambda' = max(lambda, 1 - lambda), lambda ~ Beta(a, a),
// so the primary sample dominates.
MixedBatch mixup(const Tensor& primary_features, const Tensor& primary_targets,
                 const Tensor& pool_features, const Tensor& pool_targets,
                 double alpha, Rng& rng);

}  // namespace beta
