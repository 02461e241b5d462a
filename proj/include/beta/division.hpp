#pragma once

#include <string>
#include <vector>

#include "beta/nn.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Per-sample cross entropy of the net's prediction against hard pseudo
// labels, in nats. No gradient is recorded.
std::vector<double> per_sample_losses(const MlpClassifier& net,
                                      const Tensor& features,
                                      const std::vector<int>& pseudo_hard);

// Index partition of the target set by clean posterior. Easy samples keep
// their hard pseudo labels and clean probability; hard samples carry soft
// labels, initialized one-hot from the hard pseudo label until co-guessing
// replaces them. `origin` names the network whose losses produced the split
// so cross-supervision wiring can be asserted.
struct SubdomainSplit {
  std::vector<std::size_t> easy;
  std::vector<int> easy_labels;
  std::vector<double> easy_clean_prob;
  std::vector<std::size_t> hard;
  Tensor hard_soft_labels;  // |hard| x K
  double threshold = 0.0;
  std::string origin;

  std::size_t total() const { return easy.size() + hard.size(); }
};

// tau in (0,1]; every sample with posterior >= tau goes easy, the rest
// hard. An empty easy side cannot be trained on and throws, advising a
// lower threshold.
SubdomainSplit divide(const std::vector<double>& posteriors,
                      const std::vector<int>& pseudo_hard,
                      std::size_t num_classes, double tau, std::string origin);

// Per-sample dump (index, loss, clean_prob, subdomain) for histogram
// plotting.
void write_division_csv(const std::string& path,
                        const std::vector<double>& losses,
                        const std::vector<double>& posteriors,
                        const SubdomainSplit& split);

}  // namespace beta
