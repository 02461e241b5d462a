#include "beta/refine.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "beta/data.hpp"

namespace beta {

void AugmentationPolicy::validate() const {
  if (sigma_weak < 0.0 || sigma_strong <= sigma_weak) {
    throw std::invalid_argument(
        "AugmentationPolicy: need 0 <= sigma_weak < sigma_strong");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("AugmentationPolicy: dropout outside [0,1)");
  }
  if (views < 1) throw std::invalid_argument("AugmentationPolicy: M >= 1");
  if (scale_lo > scale_hi) {
    throw std::invalid_argument("AugmentationPolicy: scale range inverted");
  }
}

AugmentationPolicy AugmentationPolicy::for_features(const Tensor& features) {
  const ColumnStats stats = feature_stats(features);
  double mean_std = 0.0;
  for (double s : stats.stddev) mean_std += s;
  mean_std /= static_cast<double>(stats.stddev.size());
  AugmentationPolicy p;
  p.sigma_weak = 0.05 * mean_std;
  p.sigma_strong = 0.2 * mean_std;
  p.validate();
  return p;
}

Tensor augment(const Tensor& x, AugKind kind, const AugmentationPolicy& policy,
               Rng& rng) {
  policy.validate();
  const double sigma =
      kind == AugKind::weak ? policy.sigma_weak : policy.sigma_strong;
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      out.at(i, j) += sigma * rng.normal();
    }
    if (kind == AugKind::strong) {
      for (std::size_t j = 0; j < out.cols(); ++j) {
        if (rng.uniform() < policy.dropout) out.at(i, j) = 0.0;
      }
      const double s = rng.uniform(policy.scale_lo, policy.scale_hi);
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= s;
    }
  }
  return out;
}

Tensor refine_easy(const MlpClassifier& net_other, const Tensor& easy_features,
                   const Tensor& easy_one_hot,
                   const std::vector<double>& clean_prob,
                   const AugmentationPolicy& policy, Rng& rng) {
  const std::size_t n = easy_features.rows();
  const std::size_t k = easy_one_hot.cols();
  if (easy_one_hot.rows() != n || clean_prob.size() != n) {
    throw std::invalid_argument("refine_easy: row count mismatch");
  }
  if (n == 0) throw std::invalid_argument("refine_easy: empty easy subdomain");

  Tensor mean_pred = Tensor::zeros({n, k});
  for (std::size_t m = 0; m < policy.views; ++m) {
    const AugKind kind = m % 2 == 0 ? AugKind::weak : AugKind::strong;
    const Tensor view = augment(easy_features, kind, policy, rng);
    const Tensor pred = net_other.forward(view);
    for (std::size_t i = 0; i < mean_pred.size(); ++i)
      mean_pred.at(i) += pred.at(i) / static_cast<double>(policy.views);
  }

  Tensor refined = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = clean_prob[i];
    if (!(rho >= 0.0 && rho <= 1.0)) {
      throw std::invalid_argument("refine_easy: clean prob outside [0,1]");
    }
    for (std::size_t j = 0; j < k; ++j) {
      refined.at(i, j) =
          rho * easy_one_hot.at(i, j) + (1.0 - rho) * mean_pred.at(i, j);
    }
  }
  return refined;
}

Tensor co_guess_hard(const MlpClassifier& net_a, const MlpClassifier& net_b,
                     const Tensor& hard_features,
                     const AugmentationPolicy& policy, Rng& rng) {
  const std::size_t n = hard_features.rows();
  const std::size_t k = net_a.num_classes();
  if (net_b.num_classes() != k) {
    throw std::invalid_argument("co_guess_hard: class count mismatch");
  }
  Tensor guess = Tensor::zeros({n, k});
  const double denom = 2.0 * static_cast<double>(policy.views);
  for (std::size_t m = 0; m < policy.views; ++m) {
    const Tensor pa = net_a.forward(augment(hard_features, AugKind::weak, policy, rng));
    const Tensor pb = net_b.forward(augment(hard_features, AugKind::weak, policy, rng));
    for (std::size_t i = 0; i < guess.size(); ++i)
      guess.at(i) += (pa.at(i) + pb.at(i)) / denom;
  }
  return guess;
}

Tensor sharpen(const Tensor& soft_rows, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("sharpen: temperature must be positive");
  }
  Tensor out = soft_rows;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < out.cols(); ++j) {
      if (out.at(i, j) < 0.0) {
        throw std::invalid_argument("sharpen: negative mass in row " +
                                    std::to_string(i));
      }
      out.at(i, j) = std::pow(out.at(i, j), 1.0 / temperature);
      sum += out.at(i, j);
    }
    if (sum <= 0.0) {
      throw std::invalid_argument("sharpen: row " + std::to_string(i) +
                                  " has no mass");
    }
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) /= sum;
  }
  return out;
}

MixedBatch mixup(const Tensor& primary_features, const Tensor& primary_targets,
                 const Tensor& pool_features, const Tensor& pool_targets,
                 double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be positive");
  if (pool_features.rows() == 0) {
    throw std::logic_error("mixup: empty partner pool");
  }
  if (primary_features.rows() != primary_targets.rows() ||
      pool_features.rows() != pool_targets.rows() ||
      primary_features.cols() != pool_features.cols() ||
      primary_targets.cols() != pool_targets.cols()) {
    throw std::invalid_argument("mixup: shape mismatch");
  }

  const std::size_t n = primary_features.rows();
  MixedBatch out;
  out.features = Tensor::zeros({n, primary_features.cols()});
  out.targets = Tensor::zeros({n, primary_targets.cols()});
  out.lambdas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = rng.beta_symmetric(alpha);
    const double lp = std::max(lam, 1.0 - lam);
    const std::size_t j = rng.index(pool_features.rows());
    out.lambdas[i] = lp;
    for (std::size_t c = 0; c < primary_features.cols(); ++c) {
      out.features.at(i, c) =
          lp * primary_features.at(i, c) + (1.0 - lp) * pool_features.at(j, c);
    }
    for (std::size_t c = 0; c < primary_targets.cols(); ++c) {
      out.targets.at(i, c) =
          lp * primary_targets.at(i, c) + (1.0 - lp) * pool_targets.at(j, c);
    }
  }
  return out;
}

}  // namespace beta
