#include "ctpg/bench/commands.h"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>

#include "ctpg/bench/csv.h"
#include "ctpg/bench/factory.h"

namespace ctpg::bench {
namespace {

std::ostream& log_of(const RunOptions& opts) {
  return opts.log != nullptr ? *opts.log : std::cerr;
}

Settings load_settings(const std::string& command, const std::string& path) {
  return Settings(command, path.empty() ? KvConfig() : KvConfig::load(path));
}

void require_out(const RunOptions& opts) {
  if (opts.out.empty()) throw ConfigError("--out <csv path> is required");
}

// Runs `body` and maps exceptions onto exit codes.
template <class Body>
int guarded(const RunOptions& opts, Body body) {
  std::ostream& log = log_of(opts);
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; results must be
// written by index so the output never depends on scheduling.
template <class Fn>
void parallel_for(int n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string short_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string opt_num(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

// ------------------------------------------------------------------ pareto

class OracleCache {
 public:
  explicit OracleCache(std::string dir) : dir_(std::move(dir)) {}

  FlatParams get(const std::string& key, const std::function<FlatParams()>& compute) {
    {
      std::lock_guard lock(mutex_);
      auto it = memory_.find(key);
      if (it != memory_.end()) return it->second;
    }
    FlatParams value;
    if (!read(key, value)) {
      value = compute();
      write(key, value);
    }
    std::lock_guard lock(mutex_);
    memory_.emplace(key, value);
    return value;
  }

 private:
  std::string path(const std::string& key) const {
    return (std::filesystem::path(dir_) / ("ctpg-oracle-" + key + ".txt")).string();
  }

  bool read(const std::string& key, FlatParams& value) const {
    if (dir_.empty()) return false;
    std::ifstream in(path(key));
    if (!in) return false;
    std::vector<double> vals;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      vals.push_back(std::stod(line));
    }
    value = Eigen::Map<const Vector>(vals.data(), vals.size());
    return true;
  }

  void write(const std::string& key, const FlatParams& value) const {
    if (dir_.empty()) return;
    std::ofstream out(path(key), std::ios::trunc);
    out << "# finite-difference oracle gradient\n";
    for (double v : value) out << fmt(v) << "\n";
  }

  std::string dir_;
  std::mutex mutex_;
  std::map<std::string, FlatParams> memory_;
};

std::string vector_text(const Vector& v) {
  std::string s;
  for (double x : v) s += fmt(x) + ",";
  return s;
}

Vector first_initial_state(const Env& env, std::uint64_t seed) {
  Rng stream(derive_seed(seed, kInitialStateStream));
  return env.sample_initial_state(stream);
}

// ------------------------------------------------------------------ eigs

Matrix random_matrix(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

bool closed_loop_stable(const Env& env, const Policy& policy, const FlatParams& params,
                        const Vector& x) {
  NfeCounter scratch;
  const Vector u = policy.act(params, x);
  const DynamicsJacobians jac = env.jacobians(x, u, scratch);
  const Matrix closed = jac.dfdx + jac.dfdu * policy.jacobian_x(params, x);
  Eigen::EigenSolver<Matrix> es(closed, false);
  return es.eigenvalues().real().maxCoeff() < 0;
}

EigsProbe probe_spectrum(std::string name, const Env& env, const Policy& policy,
                         const FlatParams& params, const Vector& x, const Vector& alpha,
                         double fd_eps, double tol) {
  EigsProbe p;
  p.name = std::move(name);
  p.n_theta = policy.num_params();
  p.eigs = reverse_jacobian_eigs(env, policy, params, x, alpha, fd_eps);
  p.pairing = check_pairing(p.eigs, tol);
  p.forward_stable = closed_loop_stable(env, policy, params, x);
  p.pass = p.pairing.residual < tol && p.pairing.near_zero >= p.n_theta &&
           (!p.forward_stable || p.pairing.max_real > 0);
  return p;
}

// --------------------------------------------------------------- gradcheck

Vector central_difference(const std::function<double(const Vector&)>& fn,
                          const Vector& at, double eps) {
  Vector grad(at.size());
  Vector probe = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + eps;
    const double up = fn(probe);
    probe[i] = at[i] - eps;
    const double down = fn(probe);
    probe[i] = at[i];
    grad[i] = (up - down) / (2 * eps);
  }
  return grad;
}

void write_history(CsvWriter& csv, const TrainHistory& h, bool wallclock) {
  for (const TrainRecord& r : h.records) {
    csv.row({fmt(static_cast<long long>(r.iteration)), fmt(r.mean_loss),
             fmt(r.nfe.n_f), fmt(r.nfe.n_dfdx), fmt(r.nfe.n_dfdu),
             fmt(wallclock ? r.wallclock : 0.0), fmt(r.grad_norm), opt_num(r.aux_mean)});
  }
}

void maybe_plot(const Settings& s, const std::string& csv, const std::string& command) {
  if (s.flag("output.plot")) write_plot_script(csv, command);
}

}  // namespace

// =================================================================== pareto

std::vector<std::string> undominated_bptt_rows(const std::vector<ParetoRecord>& rows) {
  std::vector<std::string> out;
  for (const ParetoRecord& b : rows) {
    if (b.estimator != "bptt") continue;
    bool dominated = false;
    for (const ParetoRecord& c : rows) {
      if (c.estimator != "ctpg" || c.seed != b.seed) continue;
      if (c.grad_error <= b.grad_error && c.nfe.total() < b.nfe.total()) {
        dominated = true;
        break;
      }
    }
    if (!dominated) {
      out.push_back("seed=" + std::to_string(b.seed) + " " + b.config + " (error " +
                    short_num(b.grad_error) + ", " + std::to_string(b.nfe.total()) +
                    " calls)");
    }
  }
  return out;
}

ParetoReport run_pareto(const Settings& s, int threads, const std::string& cache_dir,
                        std::ostream& log) {
  const EnvHandle handle = make_env(s);
  const Env& env = handle.env();
  const std::vector<double> steps = s.list("pareto.bptt_steps");
  const std::vector<double> tols = s.list("pareto.ctpg_tols");
  const std::vector<double> node_tols = s.list("pareto.node_tols");
  const std::vector<int> seeds = s.int_list("pareto.seeds");
  const double oracle_h = s.num("pareto.oracle_h");
  const double oracle_eps = s.num("pareto.oracle_eps");
  const double floor = s.num("pareto.error_floor");
  if (seeds.empty()) throw ConfigError("pareto.seeds is empty");
  for (double h : steps) if (!(h > 0)) throw ConfigError("pareto.bptt_steps must be positive");
  for (double t : tols) if (!(t > 0)) throw ConfigError("pareto.ctpg_tols must be positive");
  for (double t : node_tols) if (!(t > 0)) throw ConfigError("pareto.node_tols must be positive");
  if (!(oracle_h > 0) || !(oracle_eps > 0)) throw ConfigError("oracle step and eps must be positive");

  struct Task {
    int seed_index;
    std::string estimator;
    double value;
  };
  std::vector<Task> tasks;
  for (size_t si = 0; si < seeds.size(); ++si) {
    for (double h : steps) tasks.push_back({static_cast<int>(si), "bptt", h});
    for (double t : tols) tasks.push_back({static_cast<int>(si), "ctpg", t});
    for (double t : node_tols) tasks.push_back({static_cast<int>(si), "node", t});
  }

  // Per-seed policy, start state and oracle gradient.
  struct SeedCase {
    PolicySetup policy;
    Vector x0;
    FlatParams reference;
  };
  std::vector<SeedCase> cases(seeds.size());
  OracleCache cache(cache_dir);
  // Only the settings that change the oracle enter its cache key.
  std::string oracle_prefix;
  for (const KeySpec& k : command_keys("pareto")) {
    if (k.key.rfind("env.", 0) == 0 || k.key.rfind("policy.", 0) == 0) {
      oracle_prefix += k.key + "=" + s.str(k.key) + "\n";
    }
  }
  parallel_for(static_cast<int>(seeds.size()), threads, [&](int i) {
    SeedCase& c = cases[i];
    const auto seed = static_cast<std::uint64_t>(seeds[i]);
    c.policy = make_policy(s, env, seed);
    c.x0 = first_initial_state(env, seed);
    const std::string key =
        fnv1a_hex(oracle_prefix + "h=" + fmt(oracle_h) + " eps=" + fmt(oracle_eps) +
                  " x0=" + vector_text(c.x0) + " theta=" + vector_text(c.policy.params));
    c.reference = cache.get(key, [&] {
      return fd_gradient_oracle(env, *c.policy.policy, c.policy.params, c.x0, oracle_h,
                                oracle_eps);
    });
  });

  ParetoReport report;
  report.records.resize(tasks.size());
  parallel_for(static_cast<int>(tasks.size()), threads, [&](int i) {
    const Task& task = tasks[i];
    const SeedCase& c = cases[task.seed_index];
    ParetoRecord& rec = report.records[i];
    rec.experiment = env.name();
    rec.estimator = task.estimator;
    rec.seed = static_cast<std::uint64_t>(seeds[task.seed_index]);
    rec.config = (task.estimator == "bptt" ? "h=" : "tol=") + short_num(task.value);
    const Policy& policy = *c.policy.policy;
    try {
      GradientEstimate est;
      if (task.estimator == "bptt") {
        est = bptt_gradient(env, policy, c.policy.params, c.x0, task.value);
      } else if (task.estimator == "ctpg") {
        const SolverConfig cfg = SolverConfig::adaptive(task.value, task.value);
        est = ctpg_gradient(env, policy, c.policy.params, c.x0, cfg, cfg);
      } else {
        est = node_gradient(env, policy, c.policy.params, c.x0,
                            SolverConfig::adaptive(task.value, task.value));
      }
      rec.nfe = est.nfe;
      rec.wallclock = est.wallclock;
      rec.loss = est.loss;
      rec.aux = est.aux;
      rec.grad_error = est.diverged ? std::numeric_limits<double>::infinity()
                                    : relative_error(est.grad, c.reference, floor);
    } catch (const SolverError& e) {
      rec.grad_error = std::numeric_limits<double>::infinity();
      rec.loss = std::numeric_limits<double>::quiet_NaN();
    }
  });
  report.undominated = undominated_bptt_rows(report.records);
  log << "pareto: " << report.records.size() << " rows over " << seeds.size()
      << " seed(s)\n";
  return report;
}

int cmd_pareto(const std::string& config_path, const RunOptions& opts) {
  return guarded(opts, [&] {
    Settings s = load_settings("pareto", config_path);
    if (opts.seed) s.override("pareto.seeds", std::to_string(*opts.seed));
    if (opts.threads) s.override("pareto.threads", std::to_string(*opts.threads));
    require_out(opts);
    std::ostream& log = log_of(opts);
    std::string cache_dir = s.str("pareto.cache_dir");
    if (cache_dir.empty()) {
      cache_dir = std::filesystem::absolute(opts.out).parent_path().string();
    }
    const ParetoReport report =
        run_pareto(s, static_cast<int>(s.integer("pareto.threads")), cache_dir, log);
    const bool wallclock = s.flag("output.wallclock");
    CsvWriter csv(opts.out, "pareto", s.fingerprint(),
                  {"experiment", "estimator", "config", "seed", "grad_error", "n_f",
                   "n_dfdx", "n_dfdu", "wallclock_s", "loss", "aux"});
    for (const ParetoRecord& r : report.records) {
      csv.row({r.experiment, r.estimator, r.config, std::to_string(r.seed),
               fmt(r.grad_error), fmt(r.nfe.n_f), fmt(r.nfe.n_dfdx), fmt(r.nfe.n_dfdu),
               fmt(wallclock ? r.wallclock : 0.0), fmt(r.loss), opt_num(r.aux)});
    }
    csv.close();
    maybe_plot(s, opts.out, "pareto");
    if (s.flag("pareto.check_dominance") && !report.undominated.empty()) {
      log << "pareto: ctpg does not dominate " << report.undominated.size()
          << " bptt point(s):\n";
      for (const std::string& u : report.undominated) log << "  " << u << "\n";
      return kExitCheckFailed;
    }
    log << "pareto: every bptt point is dominated by a ctpg point\n";
    return kExitOk;
  });
}

// ============================================================== instability

InstabilityReport run_instability(const Settings& s, int threads, std::ostream& log) {
  const EnvHandle handle = make_env(s);
  const Env& env = handle.env();
  TrainConfig config = make_train_config(s);
  config.threads = threads;
  InstabilityReport report;

  auto train = [&](const TrainConfig& c) {
    PolicySetup p = make_policy(s, env, c.seed);
    return train_policy(env, *p.policy, p.params, c).history;
  };
  report.primary = train(config);
  if (s.flag("instability.twin")) {
    TrainConfig twin = config;
    twin.estimator.kind = EstimatorKind::kCtpg;
    report.twin = train(twin);
  }

  const auto& recs = report.primary.records;
  const double aux0 = recs.front().aux_mean.value_or(0.0);
  const double aux1 = recs.back().aux_mean.value_or(0.0);
  report.aux_growth = aux0 > 0 ? aux1 / aux0
                               : (aux1 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  report.loss_decreased = recs.back().mean_loss < recs.front().mean_loss;
  if (report.twin) {
    const auto& tw = report.twin->records;
    const long after = s.integer("instability.twin_after");
    for (const TrainRecord& r : tw) {
      if (r.iteration > after && !(r.mean_loss <= tw.front().mean_loss)) {
        report.twin_bounded = false;
      }
    }
  }
  report.passed = report.aux_growth > s.num("instability.min_aux_growth") &&
                  report.loss_decreased && report.twin_bounded;
  log << "instability: aux " << aux0 << " -> " << aux1 << " (x" << report.aux_growth
      << "), loss " << recs.front().mean_loss << " -> " << recs.back().mean_loss;
  if (report.twin) log << ", twin loss -> " << report.twin->records.back().mean_loss;
  log << "\n";
  return report;
}

int cmd_instability(const std::string& config_path, const RunOptions& opts) {
  return guarded(opts, [&] {
    Settings s = load_settings("instability", config_path);
    if (opts.seed) s.override("train.seed", std::to_string(*opts.seed));
    require_out(opts);
    std::ostream& log = log_of(opts);
    const InstabilityReport report = run_instability(s, opts.threads.value_or(0), log);
    CsvWriter csv(opts.out, "instability", s.fingerprint(),
                  {"estimator", "iteration", "loss", "aux"});
    const std::string primary = s.str("train.estimator");
    for (const TrainRecord& r : report.primary.records) {
      csv.row({primary, fmt(static_cast<long long>(r.iteration)), fmt(r.mean_loss),
               opt_num(r.aux_mean)});
    }
    if (report.twin) {
      for (const TrainRecord& r : report.twin->records) {
        csv.row({"ctpg", fmt(static_cast<long long>(r.iteration)), fmt(r.mean_loss), ""});
      }
    }
    csv.close();
    maybe_plot(s, opts.out, "instability");
    if (s.flag("instability.check") && !report.passed) {
      log << "instability: expected behaviour not observed (growth "
          << (report.aux_growth > s.num("instability.min_aux_growth") ? "ok" : "too small")
          << ", loss " << (report.loss_decreased ? "decreased" : "did not decrease")
          << ", twin " << (report.twin_bounded ? "bounded" : "exceeded its start") << ")\n";
      return kExitCheckFailed;
    }
    return kExitOk;
  });
}

// ==================================================================== train

int cmd_train(const std::string& config_path, const RunOptions& opts) {
  return guarded(opts, [&] {
    Settings s = load_settings("train", config_path);
    if (opts.seed) s.override("train.seed", std::to_string(*opts.seed));
    if (opts.threads) s.override("train.threads", std::to_string(*opts.threads));
    require_out(opts);
    std::ostream& log = log_of(opts);
    const EnvHandle handle = make_env(s);
    const Env& env = handle.env();
    TrainConfig config = make_train_config(s);
    config.threads = static_cast<int>(s.integer("train.threads"));
    PolicySetup p = make_policy(s, env, config.seed);
    const TrainResult result = train_policy(env, *p.policy, p.params, config);

    CsvWriter csv(opts.out, "train", s.fingerprint(),
                  {"iteration", "mean_loss", "n_f", "n_dfdx", "n_dfdu", "wallclock_s",
                   "grad_norm", "aux_mean"});
    write_history(csv, result.history, s.flag("output.wallclock"));
    csv.close();
    maybe_plot(s, opts.out, "train");

    std::string params_path = s.str("output.params");
    if (params_path.empty()) {
      params_path = std::filesystem::path(opts.out).replace_extension(".params").string();
    }
    ParamFileMeta meta;
    meta.policy_kind = p.kind;
    if (p.arch) meta.arch = *p.arch;
    meta.seed = config.seed;
    save_params(params_path, result.params, meta);

    const std::string traj_path = s.str("output.trajectories");
    if (!traj_path.empty()) {
      const long grid = s.integer("output.trajectory_grid");
      const double dt = s.num("output.trajectory_dt");
      if (grid < 1 || !(dt > 0)) throw ConfigError("trajectory grid and dt must be positive");
      std::vector<Vector> starts;
      if (env.name() == "diffdrive") {
        const double box = s.num("env.diffdrive.box");
        for (long i = 0; i < grid; ++i) {
          for (long j = 0; j < grid; ++j) {
            Vector x = Vector::Zero(5);
            x[0] = grid == 1 ? 0.0 : -box + 2 * box * i / (grid - 1);
            x[1] = grid == 1 ? 0.0 : -box + 2 * box * j / (grid - 1);
            starts.push_back(x);
          }
        }
      } else {
        Rng stream(derive_seed(config.seed, "evaluation"));
        starts = sample_initial_states(env, static_cast<int>(grid * grid), stream);
      }
      std::vector<std::string> header{"trajectory", "t"};
      for (int k = 0; k < env.dim_x(); ++k) header.push_back("x" + std::to_string(k));
      CsvWriter tcsv(traj_path, "train", s.fingerprint(), header);
      for (size_t n = 0; n < starts.size(); ++n) {
        NfeCounter scratch;
        const Rollout r = rollout_loss(env, *p.policy, result.params, starts[n],
                                       SolverConfig::rk4(dt), scratch);
        if (!r.trajectory) continue;
        for (int k = 0; k < r.trajectory->num_knots(); ++k) {
          std::vector<std::string> cells{std::to_string(n),
                                         fmt(r.trajectory->knot_times()[k])};
          for (double v : r.trajectory->knot_states()[k]) cells.push_back(fmt(v));
          tcsv.row(cells);
        }
      }
      tcsv.close();
    }
    const auto& last = result.history.records.back();
    log << "train: " << result.history.records.size() << " iterations, loss "
        << result.history.records.front().mean_loss << " -> " << last.mean_loss << ", "
        << last.nfe.total() << " oracle calls\n";
    return kExitOk;
  });
}

// ===================================================================== eigs

std::vector<EigsProbe> run_eigs(const Settings& s) {
  const long systems = s.integer("eigs.random_systems");
  const int d = static_cast<int>(s.integer("eigs.state_dim"));
  const int k = static_cast<int>(s.integer("eigs.control_dim"));
  const double tol = s.num("eigs.tolerance");
  const double fd_eps = s.num("eigs.fd_eps");
  if (systems < 0 || d < 1 || k < 1) throw ConfigError("eigs dimensions must be positive");
  std::vector<int> hidden = s.int_list("eigs.hidden");

  std::vector<EigsProbe> probes;
  Rng rng(derive_seed(s.u64("eigs.seed"), "eigs"));
  for (long i = 0; i < systems; ++i) {
    const LqrEnv env(random_matrix(rng, d, d), random_matrix(rng, d, k),
                     Matrix::Identity(d, d), Matrix::Identity(k, k), 1.0,
                     point_mass(Vector::Zero(d)));
    std::vector<int> sizes{d};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(k);
    const MlpArch arch(sizes);
    const MlpPolicy policy(arch, FeatureMap::identity(d));
    const FlatParams params = init_params(arch, rng());
    const Vector x = random_matrix(rng, d, 1);
    const Vector alpha = random_matrix(rng, d, 1);
    probes.push_back(probe_spectrum("random" + std::to_string(i), env, policy, params,
                                    x, alpha, fd_eps, tol));
  }
  const Matrix I = Matrix::Identity(2, 2);
  const Vector ones = Vector::Ones(2);
  if (s.flag("eigs.include_lqr")) {
    const LqrEnv env(Matrix::Zero(2, 2), I, I, I, 25.0, point_mass(ones));
    const ScalarGainPolicy policy(2);
    probes.push_back(probe_spectrum("lqr_closed_loop", env, policy,
                                    FlatParams::Ones(1), ones, ones, fd_eps, tol));
  }
  if (s.flag("eigs.include_zero")) {
    const LqrEnv env(Matrix::Zero(2, 2), Matrix::Zero(2, 2), I, I, 1.0, point_mass(ones));
    const ScalarGainPolicy policy(2);
    probes.push_back(probe_spectrum("zero_dynamics", env, policy, FlatParams::Ones(1),
                                    ones, ones, fd_eps, tol));
  }
  return probes;
}

int cmd_eigs(const std::string& config_path, const RunOptions& opts) {
  return guarded(opts, [&] {
    Settings s = load_settings("eigs", config_path);
    if (opts.seed) s.override("eigs.seed", std::to_string(*opts.seed));
    require_out(opts);
    std::ostream& log = log_of(opts);
    const std::vector<EigsProbe> probes = run_eigs(s);
    CsvWriter csv(opts.out, "eigs", s.fingerprint(),
                  {"probe", "n_theta", "eig_index", "re", "im", "pairing_residual",
                   "pairing_pass"});
    int failed = 0;
    for (const EigsProbe& p : probes) {
      for (size_t i = 0; i < p.eigs.size(); ++i) {
        csv.row({p.name, std::to_string(p.n_theta), std::to_string(i),
                 fmt(p.eigs[i].real()), fmt(p.eigs[i].imag()), fmt(p.pairing.residual),
                 p.pass ? "1" : "0"});
      }
      if (!p.pass) {
        ++failed;
        log << "eigs: probe " << p.name << " failed (residual " << p.pairing.residual
            << ", zeros " << p.pairing.near_zero << "/" << p.n_theta << ", max re "
            << p.pairing.max_real << ")\n";
      }
    }
    csv.close();
    maybe_plot(s, opts.out, "eigs");
    log << "eigs: " << probes.size() - failed << "/" << probes.size()
        << " probes pair up\n";
    return failed == 0 ? kExitOk : kExitCheckFailed;
  });
}

// ================================================================ gradcheck

std::vector<GradCheck> run_gradcheck(const Settings& s) {
  AdjointOptions options;
  options.drop_policy_chain = s.flag("gradcheck.drop_policy_chain");
  const std::string override_tol = s.str("gradcheck.tolerance");
  // NaN = keep each check's own tolerance (std::optional trips a gcc 11 false positive here).
  const double tol_override =
      override_tol.empty() ? std::numeric_limits<double>::quiet_NaN() : s.num("gradcheck.tolerance");
  const std::uint64_t seed = s.u64("gradcheck.seed");
  std::vector<GradCheck> checks;
  auto add = [&](std::string name, double error, double tolerance) {
    GradCheck c;
    c.name = std::move(name);
    c.error = error;
    c.tolerance = std::isnan(tol_override) ? tolerance : tol_override;
    c.pass = c.error <= c.tolerance;
    checks.push_back(c);
  };

  const DiffDriveEnv drive(0.5, 0.1, 1.0, diffdrive_sampler());
  const Vector x0 = first_initial_state(drive, seed);
  const SolverConfig tight = SolverConfig::adaptive(1e-8, 1e-8);

  {  // BPTT is the exact gradient of the Euler-discretized loss.
    const MlpArch arch({7, 8, 2});
    const MlpPolicy policy(arch, drive.features());
    const FlatParams params = init_params(arch, derive_seed(seed, kParamInitStream));
    const double h = 0.01;
    const GradientEstimate est = bptt_gradient(drive, policy, params, x0, h, options);
    const Vector ref = central_difference(
        [&](const Vector& th) { return euler_loss(drive, policy, th, x0, h); }, params, 1e-6);
    add("bptt_vs_discrete_fd", relative_error(est.grad, ref), 1e-5);
  }
  {  // CTPG against the RK4 finite-difference oracle, and its adjoint
     // against perturbations of the initial state.
    const MlpArch arch({7, 4, 2});
    const MlpPolicy policy(arch, drive.features());
    const FlatParams params = init_params(arch, derive_seed(seed, kParamInitStream));
    const GradientEstimate est = ctpg_gradient(drive, policy, params, x0, tight, tight, options);
    const FlatParams ref = fd_gradient_oracle(drive, policy, params, x0, 1e-3, 1e-6);
    add("ctpg_vs_oracle", relative_error(est.grad, ref), 1e-4);
    const Vector dx0 = central_difference(
        [&](const Vector& x) {
          NfeCounter scratch;
          return rollout_loss(drive, policy, params, x, SolverConfig::rk4(1e-3), scratch).loss;
        },
        x0, 1e-6);
    add("adjoint_vs_state_fd", relative_error(est.initial_adjoint, dx0), 1e-4);
  }
  {  // Scalar-gain LQR: L(k) = (1 + k^2)(1 - exp(-2kT)) / k.
    const Matrix I = Matrix::Identity(2, 2);
    const LqrEnv lqr(Matrix::Zero(2, 2), I, I, I, 25.0, point_mass(Vector::Ones(2)));
    const ScalarGainPolicy policy(2);
    const double T = 25.0;
    auto dloss = [&](double k) {
      const double e = std::exp(-2 * k * T);
      return (1 - 1 / (k * k)) * (1 - e) + (1 + k * k) / k * 2 * T * e;
    };
    const GradientEstimate at2 = ctpg_gradient(lqr, policy, FlatParams::Constant(1, 2.0),
                                               Vector::Ones(2), tight, tight, options);
    add("lqr_gain_gradient", std::abs(at2.grad[0] - dloss(2.0)) / std::abs(dloss(2.0)), 1e-4);
    const GradientEstimate at1 = ctpg_gradient(lqr, policy, FlatParams::Constant(1, 1.0),
                                               Vector::Ones(2), tight, tight, options);
    add("lqr_stationary_gain", std::abs(at1.grad[0]), 1e-4);
  }
  return checks;
}

int cmd_gradcheck(const std::string& config_path, const RunOptions& opts) {
  return guarded(opts, [&] {
    Settings s = load_settings("gradcheck", config_path);
    if (opts.seed) s.override("gradcheck.seed", std::to_string(*opts.seed));
    std::ostream& log = opts.log != nullptr ? *opts.log : std::cout;
    const std::vector<GradCheck> checks = run_gradcheck(s);
    bool ok = true;
    log << std::left << std::setw(24) << "check" << std::setw(14) << "error"
        << std::setw(14) << "tolerance" << "status\n";
    for (const GradCheck& c : checks) {
      log << std::setw(24) << c.name << std::setw(14) << short_num(c.error) << std::setw(14)
          << short_num(c.tolerance) << (c.pass ? "ok" : "FAIL") << "\n";
      ok = ok && c.pass;
    }
    return ok ? kExitOk : kExitCheckFailed;
  });
}

int run_command(const std::string& command, const std::string& config_path,
                const RunOptions& opts) {
  if (command == "pareto") return cmd_pareto(config_path, opts);
  if (command == "instability") return cmd_instability(config_path, opts);
  if (command == "train") return cmd_train(config_path, opts);
  if (command == "eigs") return cmd_eigs(config_path, opts);
  if (command == "gradcheck") return cmd_gradcheck(config_path, opts);
  log_of(opts) << "unknown command '" << command << "'\n";
  return kExitConfigError;
}

}  // namespace ctpg::bench
