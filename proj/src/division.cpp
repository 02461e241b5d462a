#include "beta/division.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "beta/data.hpp"

namespace beta {

std::vector<double> per_sample_losses(const MlpClassifier& net,
                                      const Tensor& features,
                                      const std::vector<int>& pseudo_hard) {
  if (pseudo_hard.size() != features.rows()) {
    throw std::invalid_argument("per_sample_losses: label count mismatch");
  }
  const Tensor probs = net.forward(features);
  std::vector<double> losses(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int k = pseudo_hard[i];
    if (k < 0 || static_cast<std::size_t>(k) >= probs.cols()) {
      throw std::invalid_argument("per_sample_losses: label " +
                                  std::to_string(k) + " outside 0.." +
                                  std::to_string(probs.cols() - 1));
    }
    losses[i] =
        -std::log(std::max(probs.at(i, static_cast<std::size_t>(k)), 1e-12));
  }
  return losses;
}

SubdomainSplit divide(const std::vector<double>& posteriors,
                      const std::vector<int>& pseudo_hard,
                      std::size_t num_classes, double tau, std::string origin) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("divide: tau must be in (0,1], got " +
                                std::to_string(tau));
  }
  if (posteriors.size() != pseudo_hard.size()) {
    throw std::invalid_argument("divide: posterior/label count mismatch");
  }
  for (double p : posteriors) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("divide: posterior outside [0,1]");
    }
  }

  SubdomainSplit split;
  split.threshold = tau;
  split.origin = std::move(origin);
  std::vector<int> hard_labels;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    if (posteriors[i] >= tau) {
      split.easy.push_back(i);
      split.easy_labels.push_back(pseudo_hard[i]);
      split.easy_clean_prob.push_back(posteriors[i]);
    } else {
      split.hard.push_back(i);
      hard_labels.push_back(pseudo_hard[i]);
    }
  }
  if (split.easy.empty()) {
    throw std::runtime_error(
        "divide: no sample reached clean posterior " + std::to_string(tau) +
        "; lower tau to keep an easy subdomain");
  }
  split.hard_soft_labels = one_hot(hard_labels, num_classes);
  return split;
}

void write_division_csv(const std::string& path,
                        const std::vector<double>& losses,
                        const std::vector<double>& posteriors,
                        const SubdomainSplit& split) {
  if (losses.size() != posteriors.size() ||
      losses.size() != split.total()) {
    throw std::invalid_argument("write_division_csv: size mismatch");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::vector<char> is_easy(losses.size(), 0);
  for (std::size_t i : split.easy) is_easy[i] = 1;
  out << "index,loss,clean_prob,subdomain\n";
  char buf[40];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out << i << ',';
    std::snprintf(buf, sizeof buf, "%.17g", losses[i]);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", posteriors[i]);
    out << buf << ',' << (is_easy[i] ? "easy" : "hard") << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace beta
