#pragma once

#include <vector>

namespace beta {

// Two-component 1-D Gaussian mixture over per-sample loss values.
// Component 0 is the low-mean ("clean") component: mu0 <= mu1 is
// re-established after every EM step, weights stay on the simplex and
// variances never drop below var_floor.
struct GaussianMixture2 {
  double w0 = 0.5, w1 = 0.5;
  double mu0 = 0.0, mu1 = 0.0;
  double var0 = 1.0, var1 = 1.0;
  // All inputs were identical: no noise signal, every sample counts as
  // clean and clean_posterior() pins to 1.
  bool degenerate = false;
  int iterations = 0;
  // Log-likelihood after each EM iteration; non-decreasing.
  std::vector<double> log_likelihoods;

  static constexpr double var_floor = 1e-6;
};

// EM fit. Means start at the 10th/90th loss percentiles with pooled
// variance and equal weights. Stops when |delta log-likelihood| < tol or
// after max_iter iterations. Needs >= 4 finite samples.
GaussianMixture2 fit_gmm2(const std::vector<double>& losses, int max_iter = 100,
                          double tol = 1e-8);

// Posterior probability of the clean component given a loss value,
// evaluated in log space; in [0, 1].
double clean_posterior(const GaussianMixture2& gmm, double loss);

}  // namespace beta
