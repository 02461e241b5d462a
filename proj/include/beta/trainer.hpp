#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beta/blackbox.hpp"
#include "beta/data.hpp"
#include "beta/diagnostics.hpp"
#include "beta/division.hpp"
#include "beta/nn.hpp"
#include "beta/refine.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Every knob of the adaptation loop. Defaults are the desk-scale working
// point; validate() rejects out-of-range values with the field name.
struct BetaConfig {
  double tau = 0.8;            // easy/hard posterior threshold, in (0,1]
  double gamma = 0.1;          // adversarial weight into the classifier
  double alpha_mix = 1.0;      // Mixup Beta(a,a) parameter
  double lambda_mse = 0.0;     // hard-batch MSE weight inside mixmatch
  double temperature = 0.5;    // sharpening T for co-guessed labels
  double entropy_beta = 0.2;   // warm-up confidence penalty weight
  double ema_momentum = 0.6;   // pseudo-label table momentum, in [0,1)
  bool freeze_pseudo_labels = false;  // keep tables at the raw black-box output
  bool disable_adversarial = false;   // structurally remove the adversarial branch

  std::size_t warmup_epochs = 3;
  std::size_t epochs = 23;     // total including warm-up; >= warmup_epochs
  std::size_t batch_size = 64;
  SgdConfig sgd{};

  // Augmentation: sigmas are fractions of the mean per-column feature std.
  std::size_t views = 2;
  double sigma_weak_frac = 0.05;
  double sigma_strong_frac = 0.2;
  double dropout = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;

  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::size_t> disc_hidden{16};
  std::size_t finetune_epochs = 2;   // final MI-only epochs
  double finetune_lr_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  // Flat JSON object; unknown keys are an error so typos cannot silently
  // fall back to defaults.
  static BetaConfig from_json_file(const std::string& path);
  // Effective configuration echo, stable key order.
  std::string to_json() const;
};

// The twin classifiers, the subdomain discriminator and their optimizer /
// pseudo-label state. Parameter storage is never shared between the nets.
struct TwinNets {
  MlpClassifier net_a;
  MlpClassifier net_b;
  MlpClassifier disc;  // K -> ... -> 2, class 0 = "easy"
  SgdState opt_a;
  SgdState opt_b;
  SgdState opt_disc;
  Tensor ema_a;  // N x K simplex rows
  Tensor ema_b;
};

TwinNets make_twins(const BetaConfig& config, std::size_t input_width,
                    std::size_t num_classes);

// Seeds both EMA tables with the one-hot black-box labels.
void init_pseudo_labels(TwinNets& twins, const std::vector<int>& blackbox_labels,
                        std::size_t num_classes);

// Argmax per row, ties to the lowest class index.
std::vector<int> hard_labels(const Tensor& table);

// row := m*row + (1-m)*fresh, renormalized to the simplex.
Tensor ema_update(const Tensor& table, const Tensor& fresh, double momentum);

// Both nets, warmup_epochs of CE against the cached pseudo labels plus the
// entropy confidence penalty. Zero epochs leaves the nets bitwise unchanged.
void warmup(TwinNets& twins, const Tensor& features, const BetaConfig& config);

struct Step1Scalars {
  double l_kd = 0.0;  // epoch means over both nets' batches
  double l_mi = 0.0;
};

// Independent distillation: each net minimizes kd_kl against its own EMA
// hard labels minus mutual_info, one pass over shuffled batches.
Step1Scalars epoch_step1(TwinNets& twins, const Tensor& features,
                         const BetaConfig& config, std::size_t epoch);

// Loss-GMM division of the target set under one network's predictions.
SubdomainSplit divide_for(const MlpClassifier& net, const Tensor& features,
                          const std::vector<int>& pseudo_hard, double tau,
                          std::string origin);

struct Step2Scalars {
  double l_dd = 0.0;   // epoch means over both nets' iterations
  double l_adv = 0.0;  // 0 when the adversarial branch never ran
};

// Cross-supervised semi-supervised step: net_a trains on split_b and vice
// versa (origins are asserted). Labels are refined against the nets'
// entry-state snapshots, so the two updates commute; the discriminator
// accumulates gradients from both passes and steps once.
Step2Scalars epoch_step2(TwinNets& twins, const Tensor& features,
                         const SubdomainSplit& split_a,
                         const SubdomainSplit& split_b,
                         const AugmentationPolicy& policy,
                         const BetaConfig& config, std::size_t epoch);

// Final fine-tune: maximizes mutual_info alone for finetune_epochs with the
// learning rates scaled down by finetune_lr_scale.
void finetune_mi(TwinNets& twins, const Tensor& features,
                 const BetaConfig& config);

// Augmentation policy for this feature scale, from the config fractions.
AugmentationPolicy policy_for(const BetaConfig& config, const Tensor& features);

struct AdaptationRun {
  MlpClassifier net_a;
  MlpClassifier net_b;
  AdaptationReport report;
};

// The full pipeline. Queries the black box exactly once for the whole
// target set, then: warm-up -> loop{EMA label update, step 1, per-network
// division, step 2} -> MI fine-tune. Ground truth on the target set only
// feeds the report; without it the diagnostic columns stay zero. Baselines
// (source-only, KD-only) are evaluated on the cached labels under a derived
// seed. Errors inside an adaptation epoch carry the epoch index.
AdaptationRun run_beta(const BetaConfig& config, BlackBoxHandle& box,
                       const LabeledVectorSet& target);

}  // namespace beta
