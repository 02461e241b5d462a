#include "beta/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "beta/blackbox.hpp"
#include "beta/rng.hpp"

namespace beta {

namespace {

using nlohmann::json;

double zero_one_error(const MlpClassifier& net, const Tensor& features,
                      const std::vector<int>& labels) {
  return 1.0 - accuracy(net.predict(features), labels);
}

std::vector<int> argmax_rows(const Tensor& soft) {
  std::vector<int> out(soft.rows());
  for (std::size_t i = 0; i < soft.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < soft.cols(); ++j) {
      if (soft.at(i, j) > soft.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> pick(const std::vector<int>& v,
                      const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

// Disagreement rate between two hypotheses on a feature set.
double disagreement(const MlpClassifier& a, const MlpClassifier& b,
                    const Tensor& features) {
  if (features.rows() == 0) return 0.0;
  const std::vector<int> pa = a.predict(features);
  const std::vector<int> pb = b.predict(features);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i] != pb[i]) ++diff;
  }
  return static_cast<double>(diff) / static_cast<double>(pa.size());
}

char* fmt17(char (&buf)[40], double v) {
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("accuracy: size mismatch");
  }
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double noise_ratio(const std::vector<int>& pseudo,
                   const std::vector<int>& truth) {
  return pseudo.empty() ? 0.0 : 1.0 - accuracy(pseudo, truth);
}

SplitNoise split_noise(const SubdomainSplit& split,
                       const std::vector<int>& full_truth) {
  for (std::size_t i : split.easy) {
    if (i >= full_truth.size()) {
      throw std::invalid_argument("split_noise: index outside ground truth");
    }
  }
  for (std::size_t i : split.hard) {
    if (i >= full_truth.size()) {
      throw std::invalid_argument("split_noise: index outside ground truth");
    }
  }
  SplitNoise noise;
  noise.rho_e = noise_ratio(split.easy_labels, pick(full_truth, split.easy));
  noise.rho_h = noise_ratio(argmax_rows(split.hard_soft_labels),
                            pick(full_truth, split.hard));
  return noise;
}

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("roc_auc: size mismatch");
  }
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) {
      throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    }
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("roc_auc: needs both classes");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // midranks over tied score runs
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

DiscrepancyEstimate discrepancy_proxy(const Tensor& easy_features,
                                      const Tensor& hard_features,
                                      std::uint64_t seed) {
  const std::size_t ne = easy_features.rows();
  const std::size_t nh = hard_features.rows();
  if (ne < 2 || nh < 2) {
    throw std::invalid_argument(
        "discrepancy_proxy: each subdomain needs at least 2 samples");
  }
  if (easy_features.cols() != hard_features.cols()) {
    throw std::invalid_argument("discrepancy_proxy: feature width mismatch");
  }

  DiscrepancyEstimate est;
  est.low_confidence = ne < 10 || nh < 10;

  // stratified halves: train the probe on the first half of each side,
  // count its errors on the rest
  Rng rng(derive_seed(seed, 0xd15c));
  const std::vector<std::size_t> pe = rng.permutation(ne);
  const std::vector<std::size_t> ph = rng.permutation(nh);
  const std::size_t te = (ne + 1) / 2;
  const std::size_t th = (nh + 1) / 2;

  const std::size_t d = easy_features.cols();
  const std::size_t train_n = te + th;
  Tensor train_x = Tensor::zeros({train_n, d});
  std::vector<int> train_y(train_n);
  for (std::size_t r = 0; r < te; ++r) {
    for (std::size_t c = 0; c < d; ++c) train_x.at(r, c) = easy_features.at(pe[r], c);
    train_y[r] = 0;
  }
  for (std::size_t r = 0; r < th; ++r) {
    for (std::size_t c = 0; c < d; ++c)
      train_x.at(te + r, c) = hard_features.at(ph[r], c);
    train_y[te + r] = 1;
  }

  SourceTrainConfig probe_cfg;
  probe_cfg.hidden = {16};
  probe_cfg.epochs = 40;
  probe_cfg.batch_size = 16;
  probe_cfg.num_classes = 2;
  probe_cfg.seed = derive_seed(seed, 0xd15c, 1);
  const MlpClassifier probe = train_source_model(
      LabeledVectorSet(Domain::source, std::move(train_x), std::move(train_y)),
      probe_cfg);

  std::size_t wrong = 0, total = 0;
  for (std::size_t r = te; r < ne; ++r) {
    const Tensor row = easy_features.gather_rows({pe[r]});
    wrong += probe.predict(row)[0] != 0;
    ++total;
  }
  for (std::size_t r = th; r < nh; ++r) {
    const Tensor row = hard_features.gather_rows({ph[r]});
    wrong += probe.predict(row)[0] != 1;
    ++total;
  }
  const double err =
      total > 0 ? static_cast<double>(wrong) / static_cast<double>(total) : 0.5;
  est.d = std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
  return est;
}

std::vector<BoundEstimate> check_bound(const MlpClassifier& net,
                                       const SubdomainSplit& split,
                                       const LabeledVectorSet& target,
                                       const std::vector<double>& alpha_grid,
                                       std::uint64_t seed) {
  const std::vector<int>& truth = DiagnosticsAccess::true_labels(target);
  if (truth.empty()) {
    throw std::logic_error("check_bound: target set carries no ground truth");
  }
  if (split.easy.empty() || split.hard.empty()) {
    throw std::invalid_argument("check_bound: both subdomains must be non-empty");
  }

  const Tensor easy_x = target.features().gather_rows(split.easy);
  const Tensor hard_x = target.features().gather_rows(split.hard);
  const std::vector<int> easy_truth = pick(truth, split.easy);
  const std::vector<int> hard_truth = pick(truth, split.hard);
  const std::vector<int>& easy_pseudo = split.easy_labels;
  const std::vector<int> hard_pseudo = argmax_rows(split.hard_soft_labels);

  const SplitNoise noise = split_noise(split, truth);

  // risk of the adapted hypothesis against pseudo labels and truth
  const double eps_e_pseudo = zero_one_error(net, easy_x, easy_pseudo);
  const double eps_h_pseudo = zero_one_error(net, hard_x, hard_pseudo);
  const double eps_e_true = zero_one_error(net, easy_x, easy_truth);
  const double eps_h_true = zero_one_error(net, hard_x, hard_truth);

  DiscrepancyEstimate disc;
  bool valid = true;
  double lambda = 0.0, lambda_hat = 0.0, d = 0.0;
  try {
    disc = discrepancy_proxy(easy_x, hard_x, seed);

    // stand-in for the ideal joint hypothesis: same architecture, trained
    // on the union with true labels
    const std::vector<std::size_t>& hidden_src = net.widths();
    std::vector<std::size_t> hidden(hidden_src.begin() + 1,
                                    hidden_src.end() - 1);
    std::vector<std::size_t> all(split.easy);
    all.insert(all.end(), split.hard.begin(), split.hard.end());
    SourceTrainConfig joint_cfg;
    joint_cfg.hidden = hidden;
    joint_cfg.epochs = 60;
    joint_cfg.batch_size = 32;
    joint_cfg.num_classes = net.num_classes();
    joint_cfg.seed = derive_seed(seed, 0x1dea);
    const MlpClassifier ideal = train_source_model(
        LabeledVectorSet(Domain::source, target.features().gather_rows(all),
                         pick(truth, all)),
        joint_cfg);

    lambda = zero_one_error(ideal, easy_x, easy_truth) +
             zero_one_error(ideal, hard_x, hard_truth);
    lambda_hat = zero_one_error(ideal, easy_x, easy_pseudo) +
                 zero_one_error(ideal, hard_x, hard_pseudo);

    // the pair (net, ideal) witnesses a lower estimate of the hypothesis-
    // class discrepancy; keep the larger of the two estimates
    const double witness = 2.0 * std::abs(disagreement(net, ideal, easy_x) -
                                          disagreement(net, ideal, hard_x));
    d = std::max(disc.d, witness);
  } catch (const std::exception&) {
    valid = false;
  }

  std::vector<BoundEstimate> out;
  out.reserve(alpha_grid.size());
  for (double alpha : alpha_grid) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("check_bound: alpha outside [0,1]");
    }
    BoundEstimate e;
    e.alpha = alpha;
    e.eps_alpha = alpha * eps_e_pseudo + (1.0 - alpha) * eps_h_pseudo;
    e.eps_t = alpha * eps_e_true + (1.0 - alpha) * eps_h_true;
    e.d = d;
    e.lambda = lambda;
    e.lambda_hat = lambda_hat;
    e.rho_e = noise.rho_e;
    e.rho_h = noise.rho_h;
    e.lhs = std::abs(e.eps_alpha - e.eps_t);
    e.rhs = alpha * (e.d + e.lambda + e.lambda_hat) + e.rho_h;
    e.holds = e.lhs <= e.rhs + 1e-9;
    e.corollary_holds = e.lambda_hat <= e.lambda + e.rho_e + e.rho_h + 1e-9;
    e.low_confidence = disc.low_confidence;
    e.valid = valid;
    out.push_back(e);
  }
  return out;
}

void export_metrics(const AdaptationReport& report,
                    const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) {
    throw std::runtime_error("cannot create directory " + directory + ": " +
                             ec.message());
  }

  const std::string csv_path = directory + "/metrics.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open for writing: " + csv_path);
  csv << "epoch,l_kd,l_mi,l_dd,l_adv,rho_e,rho_h,acc_a,acc_b,bound_lhs,"
         "bound_rhs\n";
  char buf[40];
  for (const EpochRow& r : report.epochs) {
    csv << r.epoch << ',' << fmt17(buf, r.l_kd) << ',' << fmt17(buf, r.l_mi)
        << ',' << fmt17(buf, r.l_dd) << ',' << fmt17(buf, r.l_adv) << ','
        << fmt17(buf, r.rho_e) << ',' << fmt17(buf, r.rho_h) << ','
        << fmt17(buf, r.acc_a) << ',' << fmt17(buf, r.acc_b) << ','
        << fmt17(buf, r.bound_lhs) << ',' << fmt17(buf, r.bound_rhs) << '\n';
  }
  if (!csv) throw std::runtime_error("write failed: " + csv_path);
  csv.close();

  json summary;
  summary["accuracy"] = report.final_acc_a;
  summary["accuracy_net_b"] = report.final_acc_b;
  summary["source_only_accuracy"] = report.source_only_acc;
  summary["kd_only_accuracy"] = report.kd_only_acc;
  summary["rho_e_after_warmup"] = report.rho_e_after_warmup;
  summary["rho_h_after_warmup"] = report.rho_h_after_warmup;
  summary["warmup_epochs"] = report.warmup_epochs;
  summary["adaptation_epochs"] = report.adaptation_epochs;
  summary["queries"] = report.queries;
  summary["has_ground_truth"] = report.has_ground_truth;
  if (!report.config_echo.empty()) {
    const json cfg = json::parse(report.config_echo, nullptr, false);
    summary["config"] = cfg.is_discarded() ? json(report.config_echo) : cfg;
  }

  const std::string json_path = directory + "/summary.json";
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw std::runtime_error("cannot open for writing: " + json_path);
  js << summary.dump(2) << '\n';
  if (!js) throw std::runtime_error("write failed: " + json_path);
}

void write_bound_report(const std::vector<BoundEstimate>& estimates,
                        const std::string& path) {
  json rows = json::array();
  for (const BoundEstimate& e : estimates) {
    json r;
    r["alpha"] = e.alpha;
    r["eps_alpha"] = e.eps_alpha;
    r["eps_t"] = e.eps_t;
    r["d"] = e.d;
    r["lambda"] = e.lambda;
    r["lambda_hat"] = e.lambda_hat;
    r["rho_e"] = e.rho_e;
    r["rho_h"] = e.rho_h;
    r["lhs"] = e.lhs;
    r["rhs"] = e.rhs;
    r["holds"] = e.holds;
    r["corollary_holds"] = e.corollary_holds;
    r["low_confidence"] = e.low_confidence;
    r["valid"] = e.valid;
    rows.push_back(std::move(r));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << rows.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace beta
