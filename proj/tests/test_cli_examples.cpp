// End-to-end checks of the CLI contract: the adapt happy path over a live
// socket, the usage-error exit code, and the eval output schema. argv[1] is
// the CLI binary path.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "beta/blackbox.hpp"
#include "beta/data.hpp"
#include "beta/nn.hpp"

using namespace beta;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("%s: %s\n", ok ? "ok" : "FAIL", what.c_str());
  if (!ok) ++failures;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Exit code of a shell command, -1 on abnormal termination.
int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "./beta";
  const fs::path dir = fs::temp_directory_path() / "beta_cli_examples";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();

  // fixture: a small source model and a labeled target CSV
  const LabeledVectorSet source = gen_two_moons(200, 0.1, 0.0, 41, Domain::source);
  SourceTrainConfig scfg;
  scfg.hidden = {8};
  scfg.epochs = 10;
  scfg.seed = 42;
  const MlpClassifier model = train_source_model(source, scfg);
  checkpoint_save(model, d + "/model.ckpt");
  save_csv(gen_two_moons(120, 0.1, 30.0, 43, Domain::target), d + "/tgt.csv",
           true);
  {
    std::ofstream cfg(d + "/cfg.json");
    cfg << "{\"seed\": 3, \"epochs\": 4, \"warmup_epochs\": 1, "
           "\"hidden\": [8], \"disc_hidden\": [8], \"finetune_epochs\": 1}\n";
  }

  // adapt against a live server writes metrics.csv and exits 0
  {
    check(run(cli + " serve --checkpoint \"" + d + "/model.ckpt\" --listen "
                    "127.0.0.1:0 > \"" + d + "/serve.log\" 2>&1 & echo $! > \"" +
              d + "/serve.pid\"") == 0,
          "server launches");
    std::string addr;
    for (int i = 0; i < 50 && addr.empty(); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      const std::string log = read_file(dir / "serve.log");
      const auto pos = log.find("listening on ");
      const auto end = log.find('\n');
      if (pos != std::string::npos && end != std::string::npos)
        addr = log.substr(pos + 13, end - pos - 13);
    }
    check(!addr.empty(), "server prints its address");
    const int code =
        run(cli + " adapt --config \"" + d + "/cfg.json\" --target \"" + d +
            "/tgt.csv\" --api " + addr + " --out \"" + d + "/run\" > \"" + d +
            "/adapt.log\" 2>&1");
    run("kill $(cat \"" + d + "/serve.pid\") 2>/dev/null");
    check(code == 0, "adapt over the socket exits 0");
    const std::string metrics = read_file(dir / "run" / "metrics.csv");
    check(metrics.rfind("epoch,l_kd,l_mi,l_dd,l_adv,rho_e,rho_h,acc_a,acc_b,"
                        "bound_lhs,bound_rhs",
                        0) == 0,
          "metrics.csv has the fixed header");
  }

  // missing --config is a usage error: exit 1, explanation on stderr
  {
    const int code = run(cli + " adapt --target \"" + d + "/tgt.csv\" --api \"" +
                         d + "/model.ckpt\" > /dev/null 2> \"" + d +
                         "/usage.txt\"");
    check(code == 1, "missing --config exits 1");
    check(read_file(dir / "usage.txt").find("--config") != std::string::npos,
          "usage text names the missing flag");
  }

  // unknown flags are rejected
  check(run(cli + " eval --model \"" + d + "/model.ckpt\" --data \"" + d +
            "/tgt.csv\" --bogus > /dev/null 2>&1") == 1,
        "unknown flag exits 1");

  // eval prints a parseable accuracy line
  {
    const int code = run(cli + " eval --model \"" + d + "/model.ckpt\" --data \"" +
                         d + "/tgt.csv\" > \"" + d + "/eval.txt\" 2>&1");
    check(code == 0, "eval exits 0");
    const std::string out = read_file(dir / "eval.txt");
    double acc = -1.0;
    check(std::sscanf(out.c_str(), "acc=%lf", &acc) == 1 && acc >= 0.0 &&
              acc <= 1.0,
          "eval prints acc=<float>");
  }

  // runtime failures exit 2
  check(run(cli + " eval --model \"" + d + "/absent.ckpt\" --data \"" + d +
            "/tgt.csv\" > /dev/null 2>&1") == 2,
        "missing checkpoint exits 2");

  return failures == 0 ? 0 : 1;
}
