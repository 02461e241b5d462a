#include "beta/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beta/gmm.hpp"
#include "beta/losses.hpp"
#include "beta/rng.hpp"

namespace beta {
namespace {

using nlohmann::json;

// Seed stream tags. Every phase draws from its own derived stream; the two
// step-2 passes intentionally share one so that identical inputs produce
// identical updates.
constexpr std::uint64_t kSeedNetA = 0x0a;
constexpr std::uint64_t kSeedNetB = 0x0b;
constexpr std::uint64_t kSeedDisc = 0x0d;
constexpr std::uint64_t kSeedWarm = 0x11;
constexpr std::uint64_t kSeedStep1A = 0x21;
constexpr std::uint64_t kSeedStep1B = 0x22;
constexpr std::uint64_t kSeedStep2 = 0x31;
constexpr std::uint64_t kSeedFinetuneA = 0x41;
constexpr std::uint64_t kSeedFinetuneB = 0x42;
constexpr std::uint64_t kSeedBound = 0x51;
constexpr std::uint64_t kSeedBaseline = 0x61;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

Tensor vstack(const Tensor& top, const Tensor& bottom) {
  require(top.cols() == bottom.cols(), "vstack: column mismatch");
  std::vector<double> values;
  values.reserve(top.size() + bottom.size());
  values.insert(values.end(), top.values().begin(), top.values().end());
  values.insert(values.end(), bottom.values().begin(), bottom.values().end());
  return Tensor::matrix(top.rows() + bottom.rows(), top.cols(), std::move(values));
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& perm,
                               std::size_t start, std::size_t stop) {
  return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                  perm.begin() + static_cast<std::ptrdiff_t>(stop));
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number())
    throw std::invalid_argument("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned())
    throw std::invalid_argument("config key '" + key +
                                "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

bool as_flag(const json& v, const std::string& key) {
  if (!v.is_boolean())
    throw std::invalid_argument("config key '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::vector<std::size_t> as_widths(const json& v, const std::string& key) {
  if (!v.is_array())
    throw std::invalid_argument("config key '" + key +
                                "' must be an array of layer widths");
  std::vector<std::size_t> out;
  for (const auto& item : v) {
    if (!item.is_number_unsigned() || item.get<std::uint64_t>() == 0)
      throw std::invalid_argument("config key '" + key +
                                  "' must hold positive integers");
    out.push_back(item.get<std::size_t>());
  }
  return out;
}

}  // namespace

void BetaConfig::validate() const {
  require(tau > 0.0 && tau <= 1.0, "tau must be in (0,1]");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(alpha_mix > 0.0, "alpha_mix must be > 0");
  require(lambda_mse >= 0.0, "lambda_mse must be >= 0");
  require(temperature > 0.0, "temperature must be > 0");
  require(entropy_beta >= 0.0, "entropy_beta must be >= 0");
  require(ema_momentum >= 0.0 && ema_momentum < 1.0,
          "ema_momentum must be in [0,1)");
  require(epochs >= warmup_epochs, "epochs must be >= warmup_epochs");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(sgd.lr_body > 0.0 && sgd.lr_head > 0.0, "learning rates must be > 0");
  require(sgd.momentum >= 0.0 && sgd.momentum < 1.0, "momentum must be in [0,1)");
  require(sgd.weight_decay >= 0.0, "weight_decay must be >= 0");
  require(views >= 1, "views must be >= 1");
  require(sigma_weak_frac >= 0.0 && sigma_weak_frac < sigma_strong_frac,
          "augmentation sigmas must satisfy 0 <= weak < strong");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
  require(scale_lo <= scale_hi, "scale_lo must be <= scale_hi");
  require(finetune_lr_scale > 0.0, "finetune_lr_scale must be > 0");
}

BetaConfig BetaConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::invalid_argument("config file is not a JSON object: " + path);

  BetaConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "tau") cfg.tau = as_number(value, key);
    else if (key == "gamma") cfg.gamma = as_number(value, key);
    else if (key == "alpha_mix") cfg.alpha_mix = as_number(value, key);
    else if (key == "lambda_mse") cfg.lambda_mse = as_number(value, key);
    else if (key == "temperature") cfg.temperature = as_number(value, key);
    else if (key == "entropy_beta") cfg.entropy_beta = as_number(value, key);
    else if (key == "ema_momentum") cfg.ema_momentum = as_number(value, key);
    else if (key == "freeze_pseudo_labels") cfg.freeze_pseudo_labels = as_flag(value, key);
    else if (key == "disable_adversarial") cfg.disable_adversarial = as_flag(value, key);
    else if (key == "warmup_epochs") cfg.warmup_epochs = as_count(value, key);
    else if (key == "epochs") cfg.epochs = as_count(value, key);
    else if (key == "batch_size") cfg.batch_size = as_count(value, key);
    else if (key == "lr_body") cfg.sgd.lr_body = as_number(value, key);
    else if (key == "lr_head") cfg.sgd.lr_head = as_number(value, key);
    else if (key == "momentum") cfg.sgd.momentum = as_number(value, key);
    else if (key == "weight_decay") cfg.sgd.weight_decay = as_number(value, key);
    else if (key == "views") cfg.views = as_count(value, key);
    else if (key == "sigma_weak_frac") cfg.sigma_weak_frac = as_number(value, key);
    else if (key == "sigma_strong_frac") cfg.sigma_strong_frac = as_number(value, key);
    else if (key == "dropout") cfg.dropout = as_number(value, key);
    else if (key == "scale_lo") cfg.scale_lo = as_number(value, key);
    else if (key == "scale_hi") cfg.scale_hi = as_number(value, key);
    else if (key == "hidden") cfg.hidden = as_widths(value, key);
    else if (key == "disc_hidden") cfg.disc_hidden = as_widths(value, key);
    else if (key == "finetune_epochs") cfg.finetune_epochs = as_count(value, key);
    else if (key == "finetune_lr_scale") cfg.finetune_lr_scale = as_number(value, key);
    else if (key == "seed") cfg.seed = as_count(value, key);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string BetaConfig::to_json() const {
  json j;
  j["tau"] = tau;
  j["gamma"] = gamma;
  j["alpha_mix"] = alpha_mix;
  j["lambda_mse"] = lambda_mse;
  j["temperature"] = temperature;
  j["entropy_beta"] = entropy_beta;
  j["ema_momentum"] = ema_momentum;
  j["freeze_pseudo_labels"] = freeze_pseudo_labels;
  j["disable_adversarial"] = disable_adversarial;
  j["warmup_epochs"] = warmup_epochs;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_body"] = sgd.lr_body;
  j["lr_head"] = sgd.lr_head;
  j["momentum"] = sgd.momentum;
  j["weight_decay"] = sgd.weight_decay;
  j["views"] = views;
  j["sigma_weak_frac"] = sigma_weak_frac;
  j["sigma_strong_frac"] = sigma_strong_frac;
  j["dropout"] = dropout;
  j["scale_lo"] = scale_lo;
  j["scale_hi"] = scale_hi;
  j["hidden"] = hidden;
  j["disc_hidden"] = disc_hidden;
  j["finetune_epochs"] = finetune_epochs;
  j["finetune_lr_scale"] = finetune_lr_scale;
  j["seed"] = seed;
  return j.dump();
}

TwinNets make_twins(const BetaConfig& config, std::size_t input_width,
                    std::size_t num_classes) {
  require(input_width > 0, "make_twins: input width must be > 0");
  require(num_classes >= 2, "make_twins: need at least two classes");
  TwinNets t;
  t.net_a = MlpClassifier(input_width, config.hidden, num_classes,
                          derive_seed(config.seed, kSeedNetA));
  t.net_b = MlpClassifier(input_width, config.hidden, num_classes,
                          derive_seed(config.seed, kSeedNetB));
  t.disc = MlpClassifier(num_classes, config.disc_hidden, 2,
                         derive_seed(config.seed, kSeedDisc));
  t.opt_a = SgdState(t.net_a, config.sgd);
  t.opt_b = SgdState(t.net_b, config.sgd);
  t.opt_disc = SgdState(t.disc, config.sgd);
  return t;
}

void init_pseudo_labels(TwinNets& twins, const std::vector<int>& blackbox_labels,
                        std::size_t num_classes) {
  const Tensor oh = one_hot(blackbox_labels, num_classes);
  twins.ema_a = oh;
  twins.ema_b = oh;
}

std::vector<int> hard_labels(const Tensor& table) {
  require(table.rank() == 2 && table.cols() > 0, "hard_labels: need a 2-D table");
  std::vector<int> out(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < table.cols(); ++c)
      if (table.at(r, c) > table.at(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

Tensor ema_update(const Tensor& table, const Tensor& fresh, double momentum) {
  require(table.rank() == 2 && table.same_shape(fresh),
          "ema_update: table and fresh predictions must share shape");
  require(momentum >= 0.0 && momentum < 1.0, "ema_update: momentum must be in [0,1)");
  Tensor out = table;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const double v = momentum * table.at(r, c) + (1.0 - momentum) * fresh.at(r, c);
      out.at(r, c) = v;
      sum += v;
    }
    require(sum > 0.0, "ema_update: row lost all mass");
    for (std::size_t c = 0; c < table.cols(); ++c) out.at(r, c) /= sum;
  }
  return out;
}

void warmup(TwinNets& twins, const Tensor& features, const BetaConfig& config) {
  const std::size_t n = features.rows();
  require(twins.ema_a.rank() == 2 && twins.ema_a.rows() == n,
          "warmup: pseudo-label tables do not cover the target set");
  for (std::size_t epoch = 0; epoch < config.warmup_epochs; ++epoch) {
    Rng order(derive_seed(config.seed, kSeedWarm, epoch));
    const auto perm = order.permutation(n);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const auto rows = slice(perm, start, std::min(start + config.batch_size, n));
      const Tensor xb = features.gather_rows(rows);
      auto train = [&](MlpClassifier& net, SgdState& opt, const Tensor& table) {
        const ad::Var lp = ad::log_softmax_rows(net.forward_logits(xb));
        const ad::Var loss =
            ad::add(cross_entropy(lp, table.gather_rows(rows)),
                    ad::scale(negative_entropy(lp), config.entropy_beta));
        ad::backward(loss);
        opt.step(net);
      };
      train(twins.net_a, twins.opt_a, twins.ema_a);
      train(twins.net_b, twins.opt_b, twins.ema_b);
    }
  }
}

Step1Scalars epoch_step1(TwinNets& twins, const Tensor& features,
                         const BetaConfig& config, std::size_t epoch) {
  const std::size_t n = features.rows();
  Step1Scalars out;
  std::size_t batches = 0;
  auto run_side = [&](MlpClassifier& net, SgdState& opt, const Tensor& table,
                      std::uint64_t stream) {
    const Tensor targets = one_hot(hard_labels(table), net.num_classes());
    Rng order(derive_seed(config.seed, stream, epoch));
    const auto perm = order.permutation(n);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const auto rows = slice(perm, start, std::min(start + config.batch_size, n));
      const ad::Var lp =
          ad::log_softmax_rows(net.forward_logits(features.gather_rows(rows)));
      StepTerms terms;
      terms.l_kd = kd_kl(targets.gather_rows(rows), lp);
      terms.l_mi = mutual_info(lp);
      const ad::Var total = total_objective(Step::distill, terms, config.gamma);
      ad::backward(total);
      opt.step(net);
      out.l_kd += terms.l_kd->scalar();
      out.l_mi += terms.l_mi->scalar();
      ++batches;
    }
  };
  run_side(twins.net_a, twins.opt_a, twins.ema_a, kSeedStep1A);
  run_side(twins.net_b, twins.opt_b, twins.ema_b, kSeedStep1B);
  if (batches > 0) {
    out.l_kd /= static_cast<double>(batches);
    out.l_mi /= static_cast<double>(batches);
  }
  return out;
}

SubdomainSplit divide_for(const MlpClassifier& net, const Tensor& features,
                          const std::vector<int>& pseudo_hard, double tau,
                          std::string origin) {
  const auto losses = per_sample_losses(net, features, pseudo_hard);
  const GaussianMixture2 gmm = fit_gmm2(losses);
  std::vector<double> posteriors(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i)
    posteriors[i] = clean_posterior(gmm, losses[i]);
  return divide(posteriors, pseudo_hard, net.num_classes(), tau, std::move(origin));
}

Step2Scalars epoch_step2(TwinNets& twins, const Tensor& features,
                         const SubdomainSplit& split_a,
                         const SubdomainSplit& split_b,
                         const AugmentationPolicy& policy,
                         const BetaConfig& config, std::size_t epoch) {
  if (split_a.origin != "a" || split_b.origin != "b")
    throw std::logic_error("epoch_step2: cross-supervision wiring violated, got "
                           "origins '" + split_a.origin + "'/'" + split_b.origin + "'");
  // Label construction reads only these entry-state snapshots, so the two
  // passes commute and may not observe each other's updates.
  const MlpClassifier snap_a = twins.net_a.clone();
  const MlpClassifier snap_b = twins.net_b.clone();

  Step2Scalars out;
  std::size_t iterations = 0;
  std::size_t adv_iterations = 0;

  // Trains `net` on the twin's split; refined labels come from the
  // trainer's own snapshot, co-guessed labels from both snapshots.
  auto pass = [&](MlpClassifier& net, SgdState& opt, const MlpClassifier& snap_self,
                  const MlpClassifier& snap_other, const SubdomainSplit& split) {
    Rng rng(derive_seed(config.seed, kSeedStep2, epoch));
    const std::size_t num_classes = net.num_classes();
    const std::size_t easy_n = split.easy.size();
    const std::size_t hard_n = split.hard.size();
    const Tensor easy_x = features.gather_rows(split.easy);
    const Tensor refined =
        refine_easy(snap_self, easy_x, one_hot(split.easy_labels, num_classes),
                    split.easy_clean_prob, policy, rng);
    Tensor hard_x, guessed;
    if (hard_n > 0) {
      hard_x = features.gather_rows(split.hard);
      guessed = sharpen(co_guess_hard(snap_self, snap_other, hard_x, policy, rng),
                        config.temperature);
    }

    const std::size_t total = easy_n + hard_n;
    const std::size_t bs = std::min(config.batch_size, total);
    std::size_t batch_easy =
        hard_n == 0 ? bs
                    : std::clamp<std::size_t>((bs * easy_n + total / 2) / total,
                                              1, bs);
    const std::size_t batch_hard = bs - batch_easy;
    const auto perm_e = rng.permutation(easy_n);
    const auto perm_h =
        hard_n > 0 ? rng.permutation(hard_n) : std::vector<std::size_t>{};
    std::size_t cursor_e = 0, cursor_h = 0;
    const std::size_t steps = (total + bs - 1) / bs;

    for (std::size_t it = 0; it < steps; ++it) {
      std::vector<std::size_t> rows_e(batch_easy);
      for (auto& r : rows_e) r = perm_e[cursor_e++ % easy_n];
      const Tensor bx_e = easy_x.gather_rows(rows_e);
      const Tensor bt_e = refined.gather_rows(rows_e);
      Tensor bx_h, bt_h;
      if (batch_hard > 0) {
        std::vector<std::size_t> rows_h(batch_hard);
        for (auto& r : rows_h) r = perm_h[cursor_h++ % hard_n];
        bx_h = hard_x.gather_rows(rows_h);
        bt_h = guessed.gather_rows(rows_h);
      }
      const Tensor pool_x = batch_hard > 0 ? vstack(bx_e, bx_h) : bx_e;
      const Tensor pool_t = batch_hard > 0 ? vstack(bt_e, bt_h) : bt_e;

      const MixedBatch mixed_e =
          mixup(bx_e, bt_e, pool_x, pool_t, config.alpha_mix, rng);
      StepTerms terms;
      const MixmatchBatch easy_batch{
          ad::log_softmax_rows(net.forward_logits(mixed_e.features)),
          mixed_e.targets};
      std::optional<MixmatchBatch> hard_batch;
      if (batch_hard > 0) {
        const MixedBatch mixed_h =
            mixup(bx_h, bt_h, pool_x, pool_t, config.alpha_mix, rng);
        hard_batch = MixmatchBatch{
            ad::log_softmax_rows(net.forward_logits(mixed_h.features)),
            mixed_h.targets};
      }
      terms.l_dd = mixmatch_loss(easy_batch, hard_batch, config.lambda_mse);

      ad::Var root = *terms.l_dd;
      if (!config.disable_adversarial && batch_hard > 0) {
        const ad::Var probs_e =
            ad::exp_elem(ad::log_softmax_rows(net.forward_logits(bx_e)));
        const ad::Var probs_h =
            ad::exp_elem(ad::log_softmax_rows(net.forward_logits(bx_h)));
        terms.l_adv = adversarial_loss(twins.disc, probs_e, probs_h, config.gamma);
        // Descending l_dd - l_adv maximizes the discriminator's objective
        // while the reversal layer feeds gamma-scaled opposing gradients to
        // the classifier; the discriminator steps once after both passes.
        root = ad::sub(root, *terms.l_adv);
        out.l_adv += terms.l_adv->scalar();
        ++adv_iterations;
      }
      ad::backward(root);
      opt.step(net);
      out.l_dd += terms.l_dd->scalar();
      ++iterations;
    }
  };

  pass(twins.net_a, twins.opt_a, snap_a, snap_b, split_b);
  pass(twins.net_b, twins.opt_b, snap_b, snap_a, split_a);

  if (adv_iterations > 0) {
    // Average the accumulated discriminator gradient over the iterations
    // that produced it.
    const double inv = 1.0 / static_cast<double>(adv_iterations);
    for (auto& p : twins.disc.parameters()) {
      if (!p.has_grad()) continue;
      Tensor& g = p.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.at(i) *= inv;
    }
    twins.opt_disc.step(twins.disc);
    out.l_adv /= static_cast<double>(adv_iterations);
  }
  if (iterations > 0) out.l_dd /= static_cast<double>(iterations);
  return out;
}

void finetune_mi(TwinNets& twins, const Tensor& features,
                 const BetaConfig& config) {
  if (config.finetune_epochs == 0) return;
  twins.opt_a.scale_learning_rate(config.finetune_lr_scale);
  twins.opt_b.scale_learning_rate(config.finetune_lr_scale);
  const std::size_t n = features.rows();
  for (std::size_t epoch = 0; epoch < config.finetune_epochs; ++epoch) {
    auto run_side = [&](MlpClassifier& net, SgdState& opt, std::uint64_t stream) {
      Rng order(derive_seed(config.seed, stream, epoch));
      const auto perm = order.permutation(n);
      for (std::size_t start = 0; start < n; start += config.batch_size) {
        const auto rows = slice(perm, start, std::min(start + config.batch_size, n));
        const ad::Var lp =
            ad::log_softmax_rows(net.forward_logits(features.gather_rows(rows)));
        const ad::Var root = ad::scale(mutual_info(lp), -1.0);
        ad::backward(root);
        opt.step(net);
      }
    };
    run_side(twins.net_a, twins.opt_a, kSeedFinetuneA);
    run_side(twins.net_b, twins.opt_b, kSeedFinetuneB);
  }
}

AugmentationPolicy policy_for(const BetaConfig& config, const Tensor& features) {
  const ColumnStats stats = feature_stats(features);
  double mean_std = 0.0;
  for (const double s : stats.stddev) mean_std += s;
  mean_std /= static_cast<double>(stats.stddev.size());
  AugmentationPolicy policy;
  policy.sigma_weak = config.sigma_weak_frac * mean_std;
  policy.sigma_strong = config.sigma_strong_frac * mean_std;
  policy.dropout = config.dropout;
  policy.scale_lo = config.scale_lo;
  policy.scale_hi = config.scale_hi;
  policy.views = config.views;
  policy.validate();
  return policy;
}

namespace {

// Plain knowledge distillation under the same budget: warm-up plus step-1
// epochs against the frozen black-box labels, no division, no step 2.
double kd_baseline_accuracy(const BetaConfig& config, const Tensor& features,
                            const std::vector<int>& blackbox_labels,
                            std::size_t num_classes,
                            const std::vector<int>& truth) {
  BetaConfig kd = config;
  kd.seed = derive_seed(config.seed, kSeedBaseline);
  TwinNets twins = make_twins(kd, features.cols(), num_classes);
  init_pseudo_labels(twins, blackbox_labels, num_classes);
  warmup(twins, features, kd);
  for (std::size_t epoch = kd.warmup_epochs; epoch < kd.epochs; ++epoch)
    epoch_step1(twins, features, kd, epoch);
  return accuracy(twins.net_a.predict(features), truth);
}

}  // namespace

AdaptationRun run_beta(const BetaConfig& config, BlackBoxHandle& box,
                       const LabeledVectorSet& target) {
  config.validate();
  require(target.size() > 0, "run_beta: target set is empty");
  require(target.dim() == box.input_width(),
          "run_beta: target width does not match the black box");
  const std::size_t num_classes = box.num_classes();
  const Tensor& features = target.features();

  const std::uint64_t queries_before = box.queries();
  const std::vector<int> blackbox_labels = box.predict_hard(features);

  TwinNets twins = make_twins(config, target.dim(), num_classes);
  init_pseudo_labels(twins, blackbox_labels, num_classes);
  const AugmentationPolicy policy = policy_for(config, features);

  AdaptationReport report;
  report.warmup_epochs = config.warmup_epochs;
  report.adaptation_epochs = config.epochs - config.warmup_epochs;
  report.has_ground_truth = target.has_true_labels();
  report.config_echo = config.to_json();
  const std::vector<int>* truth =
      report.has_ground_truth ? &DiagnosticsAccess::true_labels(target) : nullptr;
  if (truth) report.source_only_acc = accuracy(blackbox_labels, *truth);

  warmup(twins, features, config);

  if (truth && report.adaptation_epochs > 0) {
    try {
      const SubdomainSplit after_warmup = divide_for(
          twins.net_a, features, hard_labels(twins.ema_a), config.tau, "a");
      const SplitNoise noise = split_noise(after_warmup, *truth);
      report.rho_e_after_warmup = noise.rho_e;
      report.rho_h_after_warmup = noise.rho_h;
    } catch (const std::exception& ex) {
      throw std::runtime_error("epoch " + std::to_string(config.warmup_epochs) +
                               ": " + ex.what());
    }
  }

  for (std::size_t e = 0; e < report.adaptation_epochs; ++e) {
    const std::size_t epoch = config.warmup_epochs + e;
    try {
      if (!config.freeze_pseudo_labels) {
        twins.ema_a =
            ema_update(twins.ema_a, twins.net_a.forward(features), config.ema_momentum);
        twins.ema_b =
            ema_update(twins.ema_b, twins.net_b.forward(features), config.ema_momentum);
      }
      const Step1Scalars s1 = epoch_step1(twins, features, config, epoch);
      const SubdomainSplit split_a = divide_for(
          twins.net_a, features, hard_labels(twins.ema_a), config.tau, "a");
      const SubdomainSplit split_b = divide_for(
          twins.net_b, features, hard_labels(twins.ema_b), config.tau, "b");
      const Step2Scalars s2 =
          epoch_step2(twins, features, split_a, split_b, policy, config, epoch);

      EpochRow row;
      row.epoch = epoch;
      row.l_kd = s1.l_kd;
      row.l_mi = s1.l_mi;
      row.l_dd = s2.l_dd;
      row.l_adv = s2.l_adv;
      if (truth) {
        const SplitNoise noise = split_noise(split_a, *truth);
        row.rho_e = noise.rho_e;
        row.rho_h = noise.rho_h;
        row.acc_a = accuracy(twins.net_a.predict(features), *truth);
        row.acc_b = accuracy(twins.net_b.predict(features), *truth);
        if (split_a.easy.size() >= 2 && split_a.hard.size() >= 2) {
          const auto bound =
              check_bound(twins.net_a, split_a, target, {0.5},
                          derive_seed(config.seed, kSeedBound, epoch));
          row.bound_lhs = bound.front().lhs;
          row.bound_rhs = bound.front().rhs;
        }
      }
      report.epochs.push_back(row);
    } catch (const std::exception& ex) {
      throw std::runtime_error("epoch " + std::to_string(epoch) + ": " + ex.what());
    }
  }

  if (report.adaptation_epochs > 0) finetune_mi(twins, features, config);

  if (truth) {
    report.final_acc_a = accuracy(twins.net_a.predict(features), *truth);
    report.final_acc_b = accuracy(twins.net_b.predict(features), *truth);
    report.kd_only_acc = kd_baseline_accuracy(config, features, blackbox_labels,
                                              num_classes, *truth);
  }
  report.queries = box.queries() - queries_before;
  return AdaptationRun{std::move(twins.net_a), std::move(twins.net_b),
                       std::move(report)};
}

}  // namespace beta
