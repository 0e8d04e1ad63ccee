#include "ctpg/bench/factory.h"

#include <cmath>

namespace ctpg::bench {
namespace {

double horizon_or(const Settings& s, double fallback) {
  return s.str("env.horizon").empty() ? fallback : s.num("env.horizon");
}

std::unique_ptr<Env> make_base_env(const Settings& s, InitialStateSampler& sampler) {
  const std::string name = s.str("env.name");
  if (name == "lqr") {
    const std::vector<double> x0 = s.list("env.lqr.x0");
    sampler = point_mass(Eigen::Map<const Vector>(x0.data(), x0.size()));
    return std::make_unique<LqrEnv>(s.matrix("env.lqr.a"), s.matrix("env.lqr.b"),
                                    s.matrix("env.lqr.q"), s.matrix("env.lqr.r"),
                                    horizon_or(s, 25.0), sampler);
  }
  if (name == "diffdrive") {
    sampler = diffdrive_sampler(s.num("env.diffdrive.box"));
    return std::make_unique<DiffDriveEnv>(s.num("env.diffdrive.wheelbase"),
                                          s.num("env.diffdrive.cost_weight"),
                                          horizon_or(s, 5.0), sampler);
  }
  if (name == "electric") {
    ElectricParams p;
    p.control_cost = s.num("env.electric.control_cost");
    p.softening = s.num("env.electric.softening");
    p.path_radius = s.num("env.electric.path_radius");
    p.path_rate = s.num("env.electric.path_rate");
    sampler = electric_sampler();
    return std::make_unique<ElectricEnv>(p, horizon_or(s, 2.0), sampler);
  }
  throw ConfigError("env.name: unknown environment '" + name +
                    "' (expected lqr, diffdrive or electric)");
}

}  // namespace

EnvHandle make_env(const Settings& s) {
  try {
    InitialStateSampler sampler;
    std::unique_ptr<Env> base = make_base_env(s, sampler);
    const double fd_eps = s.num("env.fd_eps");
    if (fd_eps < 0) throw ConfigError("env.fd_eps must be >= 0");
    std::unique_ptr<Env> wrapper;
    if (fd_eps > 0) {
      wrapper = std::make_unique<FiniteDifferenceEnv>(
          finite_difference_adapter(*base, fd_eps, sampler));
    }
    return EnvHandle(std::move(base), std::move(wrapper));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  }
}

PolicySetup make_policy(const Settings& s, const Env& env, std::uint64_t seed) {
  PolicySetup out;
  out.kind = s.str("policy.kind");
  const int d = env.dim_x(), k = env.dim_u();
  if (out.kind == "mlp") {
    const FeatureMap features = env.features();
    std::vector<int> sizes{features.feature_dim};
    for (int width : s.int_list("policy.hidden")) {
      if (width < 1) throw ConfigError("policy.hidden: widths must be positive");
      sizes.push_back(width);
    }
    sizes.push_back(k);
    MlpArch arch(sizes, s.num("policy.last_layer_scale"));
    out.params = init_params(arch, derive_seed(seed, kParamInitStream));
    out.policy = std::make_unique<MlpPolicy>(arch, features);
    out.arch = arch;
  } else if (out.kind == "linear") {
    out.params = LinearPolicy::flatten(s.num("policy.gain") * Matrix::Identity(k, d));
    out.policy = std::make_unique<LinearPolicy>(d, k);
  } else if (out.kind == "gain") {
    if (d != k) throw ConfigError("policy.kind=gain needs as many controls as states");
    out.params = FlatParams::Constant(1, s.num("policy.gain"));
    out.policy = std::make_unique<ScalarGainPolicy>(d);
  } else if (out.kind == "lqr_optimal") {
    const auto* lqr = dynamic_cast<const LqrEnv*>(&env);
    if (lqr == nullptr) {
      // The FD adapter hides the type; its base must then be the LQR env.
      throw ConfigError("policy.kind=lqr_optimal needs env.name=lqr without env.fd_eps");
    }
    out.params = LinearPolicy::flatten(
        lqr_optimal_gain(lqr->A(), lqr->B(), lqr->Q(), lqr->R()));
    out.policy = std::make_unique<LinearPolicy>(d, k);
  } else {
    throw ConfigError("policy.kind: unknown policy '" + out.kind +
                      "' (expected mlp, linear, gain or lqr_optimal)");
  }
  return out;
}

EstimatorSettings make_estimator(const Settings& s) {
  EstimatorSettings e;
  try {
    e.kind = parse_estimator(s.str("train.estimator"));
  } catch (const std::invalid_argument& err) {
    throw ConfigError(std::string("train.estimator: ") + err.what());
  }
  const double abstol = s.num("solver.abstol"), reltol = s.num("solver.reltol");
  if (!(abstol > 0) || !(reltol > 0)) throw ConfigError("solver tolerances must be positive");
  e.forward = e.backward = SolverConfig::adaptive(abstol, reltol);
  e.bptt_step = s.num("solver.bptt_step");
  if (!(e.bptt_step > 0)) throw ConfigError("solver.bptt_step must be positive");
  return e;
}

TrainConfig make_train_config(const Settings& s) {
  TrainConfig c;
  c.estimator = make_estimator(s);
  c.iterations = static_cast<int>(s.integer("train.iterations"));
  c.batch_size = static_cast<int>(s.integer("train.batch_size"));
  c.adam.step_size = s.num("train.lr");
  const double clip = s.num("train.clip");
  if (clip < 0) throw ConfigError("train.clip must be >= 0");
  if (clip > 0) c.grad_clip = clip;
  c.seed = s.u64("train.seed");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace ctpg::bench
