#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "beta/blackbox.hpp"
#include "beta/data.hpp"
#include "beta/diagnostics.hpp"
#include "beta/division.hpp"
#include "beta/nn.hpp"
#include "beta/trainer.hpp"

namespace {

using namespace beta;

// Argument problems discovered after flag parsing; exit code 1 like any
// other usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int run_gen_data(const std::string& kind, std::size_t n, double noise_sigma,
                 double rotation, std::size_t dim, std::size_t classes,
                 double shift, std::uint64_t seed, const std::string& source_out,
                 const std::string& target_out) {
  if (kind == "moons") {
    const LabeledVectorSet source =
        gen_two_moons(n, noise_sigma, 0.0, seed, Domain::source);
    const LabeledVectorSet target =
        gen_two_moons(n, noise_sigma, rotation, seed + 1, Domain::target);
    save_csv(source, source_out, true);
    save_csv(target, target_out, true);
  } else if (kind == "blobs") {
    const auto [source, target] = gen_gaussian_shift(n, dim, classes, shift, seed);
    save_csv(source, source_out, true);
    save_csv(target, target_out, true);
  } else {
    throw UsageError("unknown --kind '" + kind + "' (expected moons or blobs)");
  }
  std::cout << "wrote " << source_out << " and " << target_out << "\n";
  return 0;
}

int run_train_source(const std::string& data_path, const std::string& out_path,
                     const std::vector<std::size_t>& hidden, std::size_t epochs,
                     std::size_t batch, std::size_t classes, std::uint64_t seed) {
  const LabeledVectorSet source = load_csv(data_path, "", Domain::source);
  SourceTrainConfig cfg;
  cfg.hidden = hidden;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.num_classes = classes;
  cfg.seed = seed;
  SourceTrainStats stats;
  const MlpClassifier model = train_source_model(source, cfg, &stats);
  checkpoint_save(model, out_path);
  std::printf("train_acc=%.17g\n", stats.train_accuracy);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_serve(const std::string& checkpoint, const std::string& listen,
              bool stdio) {
  const MlpClassifier model = checkpoint_load(checkpoint);
  if (stdio) {
    serve_stream(model, std::cin, std::cout);
    return 0;
  }
  if (listen.empty())
    throw UsageError("serve needs --listen addr:port or --stdio");
  BlackBoxServer server(model, listen);
  std::cout << "listening on " << server.address() << "\n" << std::flush;
  for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
}

int run_adapt(const std::string& config_path, const std::string& target_path,
              std::string api, const std::string& out_dir, bool seed_given,
              std::uint64_t seed) {
  if (api.empty()) {
    const char* env = std::getenv("BETA_API_ADDR");
    if (env != nullptr) api = env;
  }
  if (api.empty())
    throw UsageError("no source predictor: pass --api <addr|checkpoint> or set "
                     "BETA_API_ADDR");

  BetaConfig config = BetaConfig::from_json_file(config_path);
  if (seed_given) config.seed = seed;
  const LabeledVectorSet target = load_csv(target_path, "", Domain::target);

  std::unique_ptr<BlackBoxHandle> box;
  if (api.find(':') != std::string::npos) {
    box = std::make_unique<SocketBlackBox>(api);
  } else {
    box = std::make_unique<InProcessBlackBox>(checkpoint_load(api));
  }

  const AdaptationRun run = run_beta(config, *box, target);
  export_metrics(run.report, out_dir);
  checkpoint_save(run.net_a, out_dir + "/net_a.ckpt");
  checkpoint_save(run.net_b, out_dir + "/net_b.ckpt");
  if (run.report.has_ground_truth) {
    std::printf("acc_a=%.17g acc_b=%.17g source_only=%.17g kd_only=%.17g\n",
                run.report.final_acc_a, run.report.final_acc_b,
                run.report.source_only_acc, run.report.kd_only_acc);
  } else {
    std::cout << "target has no ground truth; accuracy columns stay zero\n";
  }
  std::cout << "wrote " << out_dir << "/metrics.csv, " << out_dir
            << "/summary.json, " << out_dir << "/net_a.ckpt, " << out_dir
            << "/net_b.ckpt\n";
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path) {
  const MlpClassifier model = checkpoint_load(model_path);
  const LabeledVectorSet data = load_csv(data_path, "", Domain::source);
  if (!data.has_true_labels())
    throw std::runtime_error("data file " + data_path + " has no label column");
  if (model.input_width() != data.dim())
    throw std::runtime_error("model expects width " +
                             std::to_string(model.input_width()) + ", data has " +
                             std::to_string(data.dim()));
  const double acc = accuracy(model.predict(data.features()),
                              data.supervised_labels());
  std::printf("acc=%.17g\n", acc);
  return 0;
}

int run_check_bound(const std::string& model_path, const std::string& target_path,
                    double tau, const std::vector<double>& alphas,
                    std::uint64_t seed, const std::string& out_path) {
  const MlpClassifier model = checkpoint_load(model_path);
  const LabeledVectorSet target = load_csv(target_path, "", Domain::target);
  if (!target.has_true_labels())
    throw std::runtime_error("bound check needs ground truth; target CSV has no "
                             "label column");
  if (model.input_width() != target.dim())
    throw std::runtime_error("model expects width " +
                             std::to_string(model.input_width()) + ", data has " +
                             std::to_string(target.dim()));
  const std::vector<int> pseudo = model.predict(target.features());
  const SubdomainSplit split =
      divide_for(model, target.features(), pseudo, tau, "a");
  const auto rows = check_bound(model, split, target, alphas, seed);
  write_bound_report(rows, out_path);
  for (const auto& row : rows)
    std::printf("alpha=%.17g lhs=%.17g rhs=%.17g holds=%s\n", row.alpha, row.lhs,
                row.rhs, row.holds ? "yes" : "no");
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box domain adaptation by domain division"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a source/target CSV pair");
  std::string kind = "moons";
  std::size_t gen_n = 400, gen_dim = 4, gen_classes = 3;
  double gen_sigma = 0.1, gen_rotation = 30.0, gen_shift = 2.5;
  std::uint64_t gen_seed = 0;
  std::string source_out, target_out;
  gen->add_option("--kind", kind, "moons or blobs");
  gen->add_option("--n", gen_n, "samples per set");
  gen->add_option("--noise-sigma", gen_sigma, "moons: gaussian jitter");
  gen->add_option("--rotation", gen_rotation, "moons: target rotation, degrees");
  gen->add_option("--dim", gen_dim, "blobs: feature dimension");
  gen->add_option("--classes", gen_classes, "blobs: class count");
  gen->add_option("--shift", gen_shift, "blobs: target mean shift");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--source-out", source_out, "source CSV path")->required();
  gen->add_option("--target-out", target_out, "target CSV path")->required();

  // train-source
  auto* train = app.add_subcommand("train-source", "fit the source predictor");
  std::string train_data, train_out;
  std::vector<std::size_t> train_hidden{16, 16};
  std::size_t train_epochs = 40, train_batch = 32, train_classes = 0;
  std::uint64_t train_seed = 1;
  train->add_option("--data", train_data, "labeled source CSV")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--hidden", train_hidden, "hidden widths")->delimiter(',');
  train->add_option("--epochs", train_epochs, "training epochs");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--classes", train_classes, "class count (0 = infer)");
  train->add_option("--seed", train_seed, "training seed");

  // serve
  auto* serve = app.add_subcommand("serve", "answer hard-label queries");
  std::string serve_ckpt, serve_listen;
  bool serve_stdio = false;
  serve->add_option("--checkpoint", serve_ckpt, "model checkpoint")->required();
  serve->add_option("--listen", serve_listen, "addr:port (port 0 = ephemeral)");
  serve->add_flag("--stdio", serve_stdio, "serve one request per stdin line");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "run the adaptation pipeline");
  std::string adapt_config, adapt_target, adapt_api, adapt_out = ".";
  std::uint64_t adapt_seed = 0;
  adapt->add_option("--config", adapt_config, "JSON config")->required();
  adapt->add_option("--target", adapt_target, "target CSV")->required();
  adapt->add_option("--api", adapt_api,
                    "black box: addr:port or checkpoint path "
                    "(default: BETA_API_ADDR)");
  adapt->add_option("--out", adapt_out, "output directory");
  auto* adapt_seed_opt = adapt->add_option("--seed", adapt_seed,
                                           "override the config seed");

  // eval
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a CSV");
  std::string eval_model, eval_data;
  eval->add_option("--model", eval_model, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "labeled CSV")->required();

  // check-bound
  auto* bound = app.add_subcommand("check-bound", "evaluate the error bound");
  std::string bound_model, bound_target, bound_out = "bound_report.json";
  double bound_tau = 0.8;
  std::vector<double> bound_alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t bound_seed = 0;
  bound->add_option("--model", bound_model, "checkpoint path")->required();
  bound->add_option("--target", bound_target, "labeled target CSV")->required();
  bound->add_option("--tau", bound_tau, "division threshold");
  bound->add_option("--alphas", bound_alphas, "alpha grid")->delimiter(',');
  bound->add_option("--seed", bound_seed, "probe training seed");
  bound->add_option("--out", bound_out, "report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed())
      return run_gen_data(kind, gen_n, gen_sigma, gen_rotation, gen_dim,
                          gen_classes, gen_shift, gen_seed, source_out,
                          target_out);
    if (train->parsed())
      return run_train_source(train_data, train_out, train_hidden, train_epochs,
                              train_batch, train_classes, train_seed);
    if (serve->parsed()) return run_serve(serve_ckpt, serve_listen, serve_stdio);
    if (adapt->parsed())
      return run_adapt(adapt_config, adapt_target, adapt_api, adapt_out,
                       adapt_seed_opt->count() > 0, adapt_seed);
    if (eval->parsed()) return run_eval(eval_model, eval_data);
    if (bound->parsed())
      return run_check_bound(bound_model, bound_target, bound_tau, bound_alphas,
                             bound_seed, bound_out);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
}
