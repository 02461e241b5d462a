#include "beta/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace beta {

namespace {

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  return sorted[static_cast<std::size_t>(std::llround(pos))];
}

}  // namespace

GaussianMixture2 fit_gmm2(const std::vector<double>& losses, int max_iter,
                          double tol) {
  if (losses.size() < 4) {
    throw std::invalid_argument("fit_gmm2: need at least 4 samples, got " +
                                std::to_string(losses.size()));
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw std::invalid_argument("fit_gmm2: non-finite loss");
  }
  const std::size_t n = losses.size();

  GaussianMixture2 g;
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  if (*lo == *hi) {
    g.degenerate = true;
    g.mu0 = g.mu1 = *lo;
    g.var0 = g.var1 = GaussianMixture2::var_floor;
    return g;
  }

  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  g.mu0 = percentile(sorted, 0.10);
  g.mu1 = percentile(sorted, 0.90);

  double mean = 0.0;
  for (double l : losses) mean += l;
  mean /= static_cast<double>(n);
  double pooled = 0.0;
  for (double l : losses) pooled += (l - mean) * (l - mean);
  pooled = std::max(pooled / static_cast<double>(n), GaussianMixture2::var_floor);
  g.var0 = g.var1 = pooled;

  std::vector<double> resp(n);  // responsibility of component 0
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    // E step in log space
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a0 =
          std::log(std::max(g.w0, 1e-300)) + log_normal_pdf(losses[i], g.mu0, g.var0);
      const double a1 =
          std::log(std::max(g.w1, 1e-300)) + log_normal_pdf(losses[i], g.mu1, g.var1);
      const double m = std::max(a0, a1);
      const double lse = m + std::log(std::exp(a0 - m) + std::exp(a1 - m));
      resp[i] = std::exp(a0 - lse);
      ll += lse;
    }
    g.log_likelihoods.push_back(ll);
    g.iterations = it + 1;

    // M step
    double n0 = 0.0;
    for (double r : resp) n0 += r;
    const double n1 = static_cast<double>(n) - n0;
    if (n0 > 1e-12) {
      double m0 = 0.0;
      for (std::size_t i = 0; i < n; ++i) m0 += resp[i] * losses[i];
      m0 /= n0;
      double v0 = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        v0 += resp[i] * (losses[i] - m0) * (losses[i] - m0);
      g.mu0 = m0;
      g.var0 = std::max(v0 / n0, GaussianMixture2::var_floor);
    }
    if (n1 > 1e-12) {
      double m1 = 0.0;
      for (std::size_t i = 0; i < n; ++i) m1 += (1.0 - resp[i]) * losses[i];
      m1 /= n1;
      double v1 = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        v1 += (1.0 - resp[i]) * (losses[i] - m1) * (losses[i] - m1);
      g.mu1 = m1;
      g.var1 = std::max(v1 / n1, GaussianMixture2::var_floor);
    }
    g.w0 = n0 / static_cast<double>(n);
    g.w1 = 1.0 - g.w0;
    if (g.mu0 > g.mu1) {
      std::swap(g.mu0, g.mu1);
      std::swap(g.var0, g.var1);
      std::swap(g.w0, g.w1);
    }

    if (std::abs(ll - prev_ll) < tol) break;
    prev_ll = ll;
  }
  return g;
}

double clean_posterior(const GaussianMixture2& gmm, double loss) {
  if (gmm.degenerate) return 1.0;
  const double a0 =
      std::log(std::max(gmm.w0, 1e-300)) + log_normal_pdf(loss, gmm.mu0, gmm.var0);
  const double a1 =
      std::log(std::max(gmm.w1, 1e-300)) + log_normal_pdf(loss, gmm.mu1, gmm.var1);
  // 1 / (1 + exp(a1 - a0)), saturating cleanly at the tails
  const double d = a1 - a0;
  if (d > 700.0) return 0.0;
  if (d < -700.0) return 1.0;
  return 1.0 / (1.0 + std::exp(d));
}

}  // namespace beta
