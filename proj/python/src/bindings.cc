#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "ctpg/bench/commands.h"
#include "ctpg/bench/config.h"
#include "ctpg/env.h"
#include "ctpg/estimators.h"
#include "ctpg/mlp.h"
#include "ctpg/ode.h"
#include "ctpg/policy.h"
#include "ctpg/train.h"

namespace py = pybind11;
using namespace pybind11::literals;

namespace ctpg {
namespace {

// Knot lists become (n_knots, dim) arrays; easier to plot than lists of rows.
Matrix stack_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix();
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

Vector sample(const Env& env, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitialStateStream));
  return env.sample_initial_state(rng);
}

py::dict record_dict(const TrainRecord& r) {
  py::dict d("iteration"_a = r.iteration, "mean_loss"_a = r.mean_loss, "n_f"_a = r.nfe.n_f,
             "n_dfdx"_a = r.nfe.n_dfdx, "n_dfdu"_a = r.nfe.n_dfdu,
             "wallclock_s"_a = r.wallclock, "grad_norm"_a = r.grad_norm,
             "failures"_a = r.failures);
  d["aux_mean"] = r.aux_mean ? py::cast(*r.aux_mean) : py::none();
  return d;
}

}  // namespace
}  // namespace ctpg

PYBIND11_MODULE(_core, m) {
  using namespace ctpg;
  m.doc() = "Continuous-time policy gradients: solvers, environments, estimators, training.";

  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
  py::register_exception<bench::ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<NfeCounter>(m, "NfeCounter")
      .def(py::init<>())
      .def_readwrite("n_f", &NfeCounter::n_f)
      .def_readwrite("n_dfdx", &NfeCounter::n_dfdx)
      .def_readwrite("n_dfdu", &NfeCounter::n_dfdu)
      .def_property_readonly("total", &NfeCounter::total)
      .def("__repr__", [](const NfeCounter& c) {
        std::ostringstream s;
        s << "NfeCounter(n_f=" << c.n_f << ", n_dfdx=" << c.n_dfdx << ", n_dfdu=" << c.n_dfdu << ")";
        return s.str();
      });

  // ---- solver -------------------------------------------------------------

  py::class_<SolverConfig>(m, "SolverConfig")
      .def(py::init<>())
      .def_static("euler", &SolverConfig::euler, "h"_a)
      .def_static("rk4", &SolverConfig::rk4, "h"_a)
      .def_static("adaptive", &SolverConfig::adaptive, "abstol"_a, "reltol"_a)
      .def_property(
          "method", [](const SolverConfig& c) { return to_string(c.method); },
          [](SolverConfig& c, const std::string& name) { c.method = parse_solver_method(name); })
      .def_readwrite("step_size", &SolverConfig::step_size)
      .def_readwrite("abstol", &SolverConfig::abstol)
      .def_readwrite("reltol", &SolverConfig::reltol)
      .def_readwrite("max_steps", &SolverConfig::max_steps)
      .def_readwrite("min_step", &SolverConfig::min_step)
      .def_readwrite("initial_step", &SolverConfig::initial_step);

  py::class_<DenseTrajectory>(m, "DenseTrajectory")
      .def("__call__", &DenseTrajectory::operator(), "t"_a)
      .def_property_readonly("times", &DenseTrajectory::knot_times)
      .def_property_readonly("states",
                             [](const DenseTrajectory& d) { return stack_rows(d.knot_states()); })
      .def_property_readonly("derivs",
                             [](const DenseTrajectory& d) { return stack_rows(d.knot_derivs()); })
      .def_property_readonly("t_start", &DenseTrajectory::t_start)
      .def_property_readonly("t_end", &DenseTrajectory::t_end)
      .def("__len__", &DenseTrajectory::num_knots);

  m.def(
      "solve_ivp",
      [](const VectorField& rhs, const Vector& x0, double t0, double t1,
         const SolverConfig& config) {
        NfeCounter counter;
        DenseTrajectory traj = solve_ivp(rhs, x0, t0, t1, config, &counter);
        return py::make_tuple(std::move(traj), counter);
      },
      "rhs"_a, "x0"_a, "t0"_a, "t1"_a, "config"_a,
      "Integrate rhs(x, t) and return (trajectory, nfe counter).");

  // ---- environments -------------------------------------------------------

  py::class_<Env>(m, "Env")
      .def_property_readonly("name", &Env::name)
      .def_property_readonly("dim_x", &Env::dim_x)
      .def_property_readonly("dim_u", &Env::dim_u)
      .def_property_readonly("horizon", &Env::horizon)
      .def("f", [](const Env& e, const Vector& x, const Vector& u) {
        NfeCounter c;
        return e.f(x, u, c);
      })
      .def("dfdx", [](const Env& e, const Vector& x, const Vector& u) {
        NfeCounter c;
        return e.dfdx(x, u, c);
      })
      .def("dfdu", [](const Env& e, const Vector& x, const Vector& u) {
        NfeCounter c;
        return e.dfdu(x, u, c);
      })
      .def("running_cost", &Env::w, "x"_a, "u"_a)
      .def("terminal_cost", &Env::J, "x"_a)
      .def("sample_initial_state", &sample, "seed"_a,
           "Initial state from the same stream training uses for `seed`.");

  py::class_<LqrEnv, Env>(m, "LqrEnv")
      .def_property_readonly("A", &LqrEnv::A)
      .def_property_readonly("B", &LqrEnv::B)
      .def_property_readonly("Q", &LqrEnv::Q)
      .def_property_readonly("R", &LqrEnv::R);
  py::class_<DiffDriveEnv, Env>(m, "DiffDriveEnv");
  py::class_<ElectricEnv, Env>(m, "ElectricEnv");
  py::class_<FiniteDifferenceEnv, Env>(m, "FiniteDifferenceEnv")
      .def_property_readonly("eps", &FiniteDifferenceEnv::eps);

  m.def(
      "lqr_env",
      [](Matrix A, Matrix B, Matrix Q, Matrix R, double horizon, const Vector& x0) {
        return lqr_make(std::move(A), std::move(B), std::move(Q), std::move(R), horizon,
                        point_mass(x0));
      },
      "A"_a, "B"_a, "Q"_a, "R"_a, "horizon"_a = 25.0, "x0"_a);
  m.def(
      "diffdrive_env",
      [](double wheelbase, double cost_weight, double horizon, double box) {
        return diffdrive_make(wheelbase, cost_weight, horizon, diffdrive_sampler(box));
      },
      "wheelbase"_a = 0.5, "cost_weight"_a = 0.1, "horizon"_a = 5.0, "box"_a = 2.0);
  m.def(
      "electric_env",
      [](double control_cost, double horizon) {
        ElectricParams p;
        p.control_cost = control_cost;
        return electric_make(p, horizon, electric_sampler());
      },
      "control_cost"_a = 0.1, "horizon"_a = 2.0);
  m.def(
      "fd_adapter",
      [](const Env& base, double eps) {
        // Same initial states as the wrapped environment.
        const Env* b = &base;
        return finite_difference_adapter(base, eps,
                                         [b](Rng& rng) { return b->sample_initial_state(rng); });
      },
      "env"_a, "eps"_a = 1e-6, py::keep_alive<0, 1>(),
      "Treat `env` as a black box; Jacobians come from forward differences.");

  m.def("lqr_optimal_gain", &lqr_optimal_gain, "A"_a, "B"_a, "Q"_a, "R"_a);

  // ---- networks and policies ----------------------------------------------

  py::class_<MlpArch>(m, "MlpArch")
      .def(py::init<std::vector<int>, double>(), "layer_sizes"_a, "last_layer_scale"_a = 1.0)
      .def_readonly("layer_sizes", &MlpArch::layer_sizes)
      .def_readonly("last_layer_scale", &MlpArch::last_layer_scale)
      .def_property_readonly("num_params", &MlpArch::num_params)
      .def("__repr__", &MlpArch::to_string);

  m.def("init_params", &init_params, "arch"_a, "seed"_a);
  m.def("mlp_forward", &mlp_forward, "params"_a, "arch"_a, "x"_a);
  m.def("mlp_jacobian_x", &mlp_jacobian_x, "params"_a, "arch"_a, "x"_a);
  m.def("mlp_vjp_params", &mlp_vjp_params, "params"_a, "arch"_a, "x"_a, "v"_a);
  m.def(
      "save_params",
      [](const std::string& path, const FlatParams& params, const std::string& kind,
         std::optional<MlpArch> arch, std::uint64_t seed) {
        ParamFileMeta meta;
        meta.policy_kind = kind;
        if (arch) meta.arch = *arch;
        meta.seed = seed;
        save_params(path, params, meta);
      },
      "path"_a, "params"_a, "policy_kind"_a = "mlp", "arch"_a = py::none(), "seed"_a = 0);
  m.def(
      "load_params",
      [](const std::string& path) {
        ParamFileMeta meta;
        FlatParams p = load_params(path, &meta);
        return py::make_tuple(std::move(p), py::dict("policy_kind"_a = meta.policy_kind,
                                                     "layer_sizes"_a = meta.arch.layer_sizes,
                                                     "seed"_a = meta.seed));
      },
      "path"_a, "Returns (params, meta).");

  py::class_<Policy>(m, "Policy")
      .def_property_readonly("name", &Policy::name)
      .def_property_readonly("num_params", &Policy::num_params)
      .def_property_readonly("state_dim", &Policy::state_dim)
      .def_property_readonly("control_dim", &Policy::control_dim)
      .def("act", &Policy::act, "params"_a, "x"_a)
      .def("jacobian_x", &Policy::jacobian_x, "params"_a, "x"_a)
      .def("vjp_params", &Policy::vjp_params, "params"_a, "x"_a, "v"_a);

  py::class_<MlpPolicy, Policy>(m, "MlpPolicy")
      .def(py::init([](const Env& env, std::vector<int> hidden, double scale) {
             std::vector<int> sizes{env.features().feature_dim};
             sizes.insert(sizes.end(), hidden.begin(), hidden.end());
             sizes.push_back(env.dim_u());
             return MlpPolicy(MlpArch(sizes, scale), env.features());
           }),
           "env"_a, "hidden"_a, "last_layer_scale"_a = 1.0,
           "tanh MLP on the environment's features.")
      .def_property_readonly("arch", &MlpPolicy::arch);
  py::class_<LinearPolicy, Policy>(m, "LinearPolicy")
      .def(py::init<int, int>(), "state_dim"_a, "control_dim"_a)
      .def_static("flatten", &LinearPolicy::flatten, "gain"_a);
  py::class_<ScalarGainPolicy, Policy>(m, "ScalarGainPolicy").def(py::init<int>(), "dim"_a);

  // ---- gradient estimators ------------------------------------------------

  py::class_<GradientEstimate>(m, "GradientEstimate")
      .def_readonly("grad", &GradientEstimate::grad)
      .def_readonly("loss", &GradientEstimate::loss)
      .def_readonly("nfe", &GradientEstimate::nfe)
      .def_readonly("wallclock", &GradientEstimate::wallclock)
      .def_readonly("forward_knots", &GradientEstimate::forward_knots)
      .def_readonly("backward_knots", &GradientEstimate::backward_knots)
      .def_readonly("initial_adjoint", &GradientEstimate::initial_adjoint)
      .def_readonly("aux", &GradientEstimate::aux)
      .def_readonly("diverged", &GradientEstimate::diverged);

  auto opts = [](bool drop) {
    AdjointOptions o;
    o.drop_policy_chain = drop;
    return o;
  };

  m.def(
      "ctpg_gradient",
      [opts](const Env& env, const Policy& policy, const FlatParams& params, const Vector& x0,
             const SolverConfig& forward, std::optional<SolverConfig> backward, bool drop) {
        py::gil_scoped_release release;
        return ctpg_gradient(env, policy, params, x0, forward, backward.value_or(forward),
                             opts(drop));
      },
      "env"_a, "policy"_a, "params"_a, "x0"_a, "forward"_a = SolverConfig::adaptive(1e-6, 1e-6),
      "backward"_a = py::none(), "drop_policy_chain"_a = false);
  m.def(
      "bptt_gradient",
      [](const Env& env, const Policy& policy, const FlatParams& params, const Vector& x0,
         double h) {
        py::gil_scoped_release release;
        return bptt_gradient(env, policy, params, x0, h);
      },
      "env"_a, "policy"_a, "params"_a, "x0"_a, "h"_a = 0.01);
  m.def(
      "node_gradient",
      [](const Env& env, const Policy& policy, const FlatParams& params, const Vector& x0,
         const SolverConfig& config) {
        py::gil_scoped_release release;
        return node_gradient(env, policy, params, x0, config);
      },
      "env"_a, "policy"_a, "params"_a, "x0"_a, "config"_a = SolverConfig::adaptive(1e-6, 1e-6));
  m.def(
      "fd_gradient_oracle",
      [](const Env& env, const Policy& policy, const FlatParams& params, const Vector& x0,
         double fine_h, double eps) {
        py::gil_scoped_release release;
        return fd_gradient_oracle(env, policy, params, x0, fine_h, eps);
      },
      "env"_a, "policy"_a, "params"_a, "x0"_a, "fine_h"_a = 1e-4, "eps"_a = 1e-5);
  m.def(
      "rollout_loss",
      [](const Env& env, const Policy& policy, const FlatParams& params, const Vector& x0,
         const SolverConfig& config) {
        NfeCounter c;
        const Rollout r = rollout_loss(env, policy, params, x0, config, c);
        return py::make_tuple(r.loss, c);
      },
      "env"_a, "policy"_a, "params"_a, "x0"_a, "config"_a = SolverConfig::adaptive(1e-6, 1e-6));
  m.def("euler_loss", &euler_loss, "env"_a, "policy"_a, "params"_a, "x0"_a, "h"_a);
  m.def("relative_error", &relative_error, "estimate"_a, "reference"_a, "floor"_a = 0.0);

  m.def("reverse_jacobian_eigs", &reverse_jacobian_eigs, "env"_a, "policy"_a, "params"_a, "x"_a,
        "alpha"_a, "fd_eps"_a = 1e-6);
  m.def(
      "check_pairing",
      [](const std::vector<std::complex<double>>& eigs, double zero_tol) {
        const SpectrumPairing p = check_pairing(eigs, zero_tol);
        return py::dict("residual"_a = p.residual, "near_zero"_a = p.near_zero,
                        "max_real"_a = p.max_real);
      },
      "eigs"_a, "zero_tol"_a = 1e-6);

  // ---- training -----------------------------------------------------------

  m.def(
      "train_policy",
      [](const Env& env, const Policy& policy, FlatParams params, const std::string& estimator,
         int iterations, int batch_size, double lr, double clip, double tol, double bptt_step,
         std::uint64_t seed, int threads) {
        TrainConfig c;
        c.estimator.kind = parse_estimator(estimator);
        c.estimator.forward = c.estimator.backward = SolverConfig::adaptive(tol, tol);
        c.estimator.bptt_step = bptt_step;
        c.iterations = iterations;
        c.batch_size = batch_size;
        c.adam.step_size = lr;
        if (clip > 0) c.grad_clip = clip;
        c.seed = seed;
        c.threads = threads;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_policy(env, policy, std::move(params), c);
        }
        py::list history;
        for (const auto& rec : r.history.records) history.append(record_dict(rec));
        return py::make_tuple(std::move(r.params), history);
      },
      "env"_a, "policy"_a, "params"_a, "estimator"_a = "ctpg", "iterations"_a = 200,
      "batch_size"_a = 16, "lr"_a = 0.01, "clip"_a = 0.0, "tol"_a = 1e-3, "bptt_step"_a = 0.01,
      "seed"_a = 0, "threads"_a = 0,
      "Adam on the batch-mean gradient. Returns (params, history); clip <= 0 disables clipping.");

  // ---- benchmark commands -------------------------------------------------

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config, const std::string& out,
         std::optional<std::uint64_t> seed) {
        bench::RunOptions o;
        o.out = out;
        o.seed = seed;
        py::gil_scoped_release release;
        return bench::run_command(command, config, o);
      },
      "command"_a, "config"_a = "", "out"_a = "", "seed"_a = py::none(),
      "Run a benchmark command as the CLI would; returns its exit code.");

  m.attr("__version__") = CTPG_VERSION;
}
