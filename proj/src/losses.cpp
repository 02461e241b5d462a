#include "beta/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace beta {

namespace {

void check_pair(const ad::Var& log_probs, const Tensor& targets,
                const char* what) {
  if (log_probs.value().rows() != targets.rows() ||
      log_probs.value().cols() != targets.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                log_probs.value().shape_str() + " vs " +
                                targets.shape_str());
  }
  if (targets.rows() == 0) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
}

// Mean of one column: (1/N) sum_i m[i][col].
ad::Var column_mean(const ad::Var& m, std::size_t col) {
  Tensor mask = Tensor::zeros({m.value().rows(), m.value().cols()});
  for (std::size_t i = 0; i < m.value().rows(); ++i) mask.at(i, col) = 1.0;
  return ad::scale(ad::sum_all(ad::mul(m, ad::Var::constant(mask))),
                   1.0 / static_cast<double>(m.value().rows()));
}

}  // namespace

ad::Var cross_entropy(const ad::Var& log_probs, const Tensor& targets) {
  check_pair(log_probs, targets, "cross_entropy");
  double n = static_cast<double>(targets.rows());
  return ad::scale(ad::sum_all(ad::mul(ad::Var::constant(targets), log_probs)),
                   -1.0 / n);
}

ad::Var negative_entropy(const ad::Var& log_probs) {
  if (log_probs.value().rows() == 0) {
    throw std::invalid_argument("negative_entropy: empty batch");
  }
  double n = static_cast<double>(log_probs.value().rows());
  ad::Var p = ad::exp_elem(log_probs);
  return ad::scale(ad::sum_all(ad::mul(p, log_probs)), 1.0 / n);
}

ad::Var kd_kl(const Tensor& pseudo, const ad::Var& student_log_probs) {
  check_pair(student_log_probs, pseudo, "kd_kl");
  double h = 0.0;  // batch-mean entropy of the pseudo rows, 0*ln(0) = 0
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    double t = pseudo.data()[i];
    if (t < 0.0) throw std::invalid_argument("kd_kl: negative target weight");
    if (t > 0.0) h -= t * std::log(t);
  }
  h /= static_cast<double>(pseudo.rows());
  return ad::offset(cross_entropy(student_log_probs, pseudo), -h);
}

ad::Var mutual_info(const ad::Var& log_probs) {
  if (log_probs.value().rows() == 0) {
    throw std::invalid_argument("mutual_info: empty batch");
  }
  double n = static_cast<double>(log_probs.value().rows());
  ad::Var p = ad::exp_elem(log_probs);
  ad::Var mean_p = ad::mean_rows(p);
  ad::Var h_of_mean =
      ad::scale(ad::sum_all(ad::mul(mean_p, ad::log_clamped(mean_p))), -1.0);
  ad::Var mean_of_h = ad::scale(ad::sum_all(ad::mul(p, log_probs)), -1.0 / n);
  return ad::sub(h_of_mean, mean_of_h);
}

ad::Var reg_uniform_from_mean(const ad::Var& mean_probs) {
  if (mean_probs.value().rows() != 1) {
    throw std::invalid_argument("reg_uniform: expected a 1xK mean row, got " +
                                mean_probs.value().shape_str());
  }
  double k = static_cast<double>(mean_probs.value().cols());
  // sum_k (1/k) * (ln(1/k) - ln mean_k)
  return ad::offset(ad::scale(ad::sum_all(ad::log_clamped(mean_probs)), -1.0 / k),
                    -std::log(k));
}

ad::Var reg_uniform(const ad::Var& log_probs) {
  if (log_probs.value().rows() == 0) {
    throw std::invalid_argument("reg_uniform: empty batch");
  }
  return reg_uniform_from_mean(ad::mean_rows(ad::exp_elem(log_probs)));
}

ad::Var mse_probs(const ad::Var& log_probs, const Tensor& targets) {
  check_pair(log_probs, targets, "mse_probs");
  ad::Var diff = ad::sub(ad::exp_elem(log_probs), ad::Var::constant(targets));
  return ad::scale(ad::sum_all(ad::mul(diff, diff)),
                   1.0 / static_cast<double>(targets.size()));
}

ad::Var mixmatch_loss(const MixmatchBatch& easy,
                      const std::optional<MixmatchBatch>& hard,
                      double lambda_mse) {
  ad::Var total = cross_entropy(easy.log_probs, easy.targets);
  ad::Var mean_union = ad::mean_rows(ad::exp_elem(easy.log_probs));
  if (hard.has_value()) {
    if (lambda_mse != 0.0) {
      total = ad::add(total, ad::scale(mse_probs(hard->log_probs, hard->targets),
                                       lambda_mse));
    }
    double ne = static_cast<double>(easy.targets.rows());
    double nh = static_cast<double>(hard->targets.rows());
    mean_union =
        ad::add(ad::scale(mean_union, ne / (ne + nh)),
                ad::scale(ad::mean_rows(ad::exp_elem(hard->log_probs)),
                          nh / (ne + nh)));
  }
  return ad::add(total, reg_uniform_from_mean(mean_union));
}

ad::Var adversarial_loss(const MlpClassifier& discriminator,
                         const ad::Var& easy_probs, const ad::Var& hard_probs,
                         double gamma) {
  if (discriminator.num_classes() != 2) {
    throw std::invalid_argument("adversarial_loss: discriminator must be 2-way");
  }
  if (easy_probs.value().cols() != discriminator.input_width() ||
      hard_probs.value().cols() != discriminator.input_width()) {
    throw std::invalid_argument(
        "adversarial_loss: input width does not match discriminator");
  }
  if (easy_probs.value().rows() == 0 || hard_probs.value().rows() == 0) {
    throw std::invalid_argument("adversarial_loss: empty subdomain batch");
  }
  ad::Var lp_easy = ad::log_softmax_rows(
      discriminator.forward_logits(ad::grad_reverse(easy_probs, gamma)));
  ad::Var lp_hard = ad::log_softmax_rows(
      discriminator.forward_logits(ad::grad_reverse(hard_probs, gamma)));
  return ad::add(column_mean(lp_easy, 0), column_mean(lp_hard, 1));
}

ad::Var total_objective(Step step, const StepTerms& terms, double gamma) {
  if (step == Step::distill) {
    if (terms.l_dd || terms.l_adv) {
      throw std::logic_error(
          "total_objective: ssl terms supplied to the distill step");
    }
    if (!terms.l_kd || !terms.l_mi) {
      throw std::logic_error("total_objective: distill step needs l_kd and l_mi");
    }
    return ad::sub(*terms.l_kd, *terms.l_mi);
  }
  if (terms.l_kd || terms.l_mi) {
    throw std::logic_error(
        "total_objective: distill terms supplied to the ssl step");
  }
  if (!terms.l_dd || !terms.l_adv) {
    throw std::logic_error("total_objective: ssl step needs l_dd and l_adv");
  }
  return ad::sub(*terms.l_dd, ad::scale(*terms.l_adv, gamma));
}

}  // namespace beta
