#ifndef CTPG_BENCH_COMMANDS_H_
#define CTPG_BENCH_COMMANDS_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctpg/bench/config.h"
#include "ctpg/estimators.h"
#include "ctpg/train.h"

namespace ctpg::bench {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfigError = 2;

struct RunOptions {
  std::string out;  // CSV path; gradcheck ignores it
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;  // overrides the config; 0 = single-threaded
  std::ostream* log = nullptr;  // defaults to std::cerr
};

// Each command loads `config_path` (empty = built-in defaults), runs, writes
// its CSV and plot script, and returns an exit code.
int cmd_pareto(const std::string& config_path, const RunOptions& opts);
int cmd_instability(const std::string& config_path, const RunOptions& opts);
int cmd_train(const std::string& config_path, const RunOptions& opts);
int cmd_eigs(const std::string& config_path, const RunOptions& opts);
int cmd_gradcheck(const std::string& config_path, const RunOptions& opts);

int run_command(const std::string& command, const std::string& config_path,
                const RunOptions& opts);

// Structured entry points, used by the commands above and by tests.

struct ParetoRecord {
  std::string experiment;
  std::string estimator;
  std::string config;  // "h=0.5", "tol=1e-06"
  std::uint64_t seed = 0;
  double grad_error = 0.0;
  NfeCounter nfe;
  double wallclock = 0.0;
  double loss = 0.0;
  std::optional<double> aux;
};

struct ParetoReport {
  std::vector<ParetoRecord> records;
  // "seed=<s> h=<h>" for every bptt row no ctpg row of the same seed beats.
  std::vector<std::string> undominated;
};

ParetoReport run_pareto(const Settings& s, int threads, const std::string& cache_dir,
                        std::ostream& log);
std::vector<std::string> undominated_bptt_rows(const std::vector<ParetoRecord>& rows);

struct InstabilityReport {
  TrainHistory primary;  // train.estimator, node by default
  std::optional<TrainHistory> twin;  // ctpg
  double aux_growth = 0.0;
  bool loss_decreased = false;
  bool twin_bounded = true;
  bool passed = false;
};

InstabilityReport run_instability(const Settings& s, int threads, std::ostream& log);

struct EigsProbe {
  std::string name;
  int n_theta = 0;
  std::vector<std::complex<double>> eigs;
  SpectrumPairing pairing;
  bool forward_stable = false;
  bool pass = false;
};

std::vector<EigsProbe> run_eigs(const Settings& s);

struct GradCheck {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

std::vector<GradCheck> run_gradcheck(const Settings& s);

}  // namespace ctpg::bench

#endif  // CTPG_BENCH_COMMANDS_H_
