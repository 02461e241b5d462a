#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beta/data.hpp"
#include "beta/division.hpp"
#include "beta/nn.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Ground-truth-aware measurement. Everything here is read-only over model
// and split state and uses 0-1 counting errors.

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth);

// Fraction of pseudo labels that disagree with ground truth.
double noise_ratio(const std::vector<int>& pseudo,
                   const std::vector<int>& truth);

struct SplitNoise {
  double rho_e = 0.0;
  double rho_h = 0.0;
};

// Wrong-label rates of the two subdomains; hard-side pseudo labels are the
// argmax of the soft rows. An empty side counts as noiseless.
SplitNoise split_noise(const SubdomainSplit& split,
                       const std::vector<int>& full_truth);

// Rank-statistic AUC with midrank tie handling; labels are 0/1 with 1 the
// positive class. Needs at least one of each.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

struct DiscrepancyEstimate {
  double d = 0.0;             // in [0, 2]
  bool low_confidence = false;  // a subdomain under 10 samples
};

// Proxy A-distance between the subdomains: a fresh probe discriminator is
// trained on stratified halves and evaluated on the held-out halves;
// d = 2*(1 - 2*err) clamped to [0, 2].
DiscrepancyEstimate discrepancy_proxy(const Tensor& easy_features,
                                      const Tensor& hard_features,
                                      std::uint64_t seed);

// One row of the convex-combination error bound
//   |eps_alpha - eps_t| <= alpha*(d + lambda + lambda_hat) + rho_h
// evaluated with counted errors and a trained stand-in for the ideal joint
// hypothesis.
struct BoundEstimate {
  double alpha = 0.0;
  double eps_alpha = 0.0;   // combined risk vs pseudo labels
  double eps_t = 0.0;       // combined risk vs ground truth
  double d = 0.0;           // subdomain discrepancy proxy
  double lambda = 0.0;      // joint risk of the stand-in vs truth
  double lambda_hat = 0.0;  // joint risk of the stand-in vs pseudo labels
  double rho_e = 0.0;
  double rho_h = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  bool corollary_holds = false;  // lambda_hat <= lambda + rho_e + rho_h
  bool low_confidence = false;
  bool valid = true;  // false when the stand-in probe could not be trained
};

// Evaluates the bound for each alpha in the grid. Shared terms (probe
// hypothesis, discrepancy, noise rates) are computed once. Requires ground
// truth on the target set.
std::vector<BoundEstimate> check_bound(const MlpClassifier& net,
                                       const SubdomainSplit& split,
                                       const LabeledVectorSet& target,
                                       const std::vector<double>& alpha_grid,
                                       std::uint64_t seed);

struct EpochRow {
  std::size_t epoch = 0;
  double l_kd = 0.0;
  double l_mi = 0.0;
  double l_dd = 0.0;
  double l_adv = 0.0;
  double rho_e = 0.0;
  double rho_h = 0.0;
  double acc_a = 0.0;
  double acc_b = 0.0;
  double bound_lhs = 0.0;
  double bound_rhs = 0.0;
};

struct AdaptationReport {
  std::vector<EpochRow> epochs;
  double final_acc_a = 0.0;  // headline
  double final_acc_b = 0.0;
  double source_only_acc = 0.0;
  double kd_only_acc = 0.0;
  double rho_e_after_warmup = 0.0;
  double rho_h_after_warmup = 0.0;
  std::size_t warmup_epochs = 0;
  std::size_t adaptation_epochs = 0;
  std::uint64_t queries = 0;
  bool has_ground_truth = false;
  std::string config_echo;  // effective config as a JSON object
};

// Writes <directory>/metrics.csv (fixed column schema, %.17g, no
// timestamps) and <directory>/summary.json. Deterministic bytes for a
// deterministic report.
void export_metrics(const AdaptationReport& report,
                    const std::string& directory);

void write_bound_report(const std::vector<BoundEstimate>& estimates,
                        const std::string& path);

}  // namespace beta
