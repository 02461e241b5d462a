#pragma once

#include <optional>

#include "beta/autodiff.hpp"
#include "beta/nn.hpp"
#include "beta/tensor.hpp"

namespace beta {

// Scalar objectives, all entropies in nats. Every function takes the
// classifier's log-probabilities (from log_softmax_rows over logits) and
// returns a batch-mean scalar graph node.

// -(1/N) sum_i sum_k t_ik * lp_ik; targets are simplex rows (one-hot for
// hard labels).
ad::Var cross_entropy(const ad::Var& log_probs, const Tensor& targets);

// (1/N) sum_i sum_k p_ik * lp_ik. Always <= 0; equals -H(p) per sample.
ad::Var negative_entropy(const ad::Var& log_probs);

// Batch-mean KL(pseudo || student). Equals cross_entropy(student, pseudo)
// minus the pseudo rows' entropy (a constant).
ad::Var kd_kl(const Tensor& pseudo, const ad::Var& student_log_probs);

// H(batch-mean prediction) - batch-mean H(prediction). In [0, ln K].
ad::Var mutual_info(const ad::Var& log_probs);

// KL(uniform || batch-mean prediction) >= 0.
ad::Var reg_uniform(const ad::Var& log_probs);
ad::Var reg_uniform_from_mean(const ad::Var& mean_probs);

// (1/(N*K)) sum_i sum_k (p_ik - t_ik)^2.
ad::Var mse_probs(const ad::Var& log_probs, const Tensor& targets);

struct MixmatchBatch {
  ad::Var log_probs;  // predictions on the mixed features
  Tensor targets;     // mixed soft targets, simplex rows
};

// CE on the mixed easy batch + lambda_mse * MSE on the mixed hard batch +
// uniform regularizer over the union. lambda_mse == 0 omits the MSE term
// entirely; an absent hard batch contributes only through its omission.
ad::Var mixmatch_loss(const MixmatchBatch& easy,
                      const std::optional<MixmatchBatch>& hard, double lambda_mse);

// E_easy[ln Omega] + E_hard[ln(1 - Omega)] where Omega is the
// discriminator's class-0 probability on the classifier's output
// distribution. Inputs cross a gradient-reversal boundary scaled by gamma,
// so one backward pass trains the discriminator to maximize this value
// while the classifier upstream receives sign-flipped gradients.
ad::Var adversarial_loss(const MlpClassifier& discriminator,
                         const ad::Var& easy_probs, const ad::Var& hard_probs,
                         double gamma);

enum class Step { distill, ssl };

struct StepTerms {
  std::optional<ad::Var> l_kd;
  std::optional<ad::Var> l_mi;
  std::optional<ad::Var> l_dd;
  std::optional<ad::Var> l_adv;
};

// Per-step scalar: distill -> l_kd - l_mi; ssl -> l_dd - gamma * l_adv.
// Terms belonging to the other step are a usage error.
ad::Var total_objective(Step step, const StepTerms& terms, double gamma);

}  // namespace beta
