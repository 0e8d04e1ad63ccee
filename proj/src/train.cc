#include "ctpg/train.h"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ctpg {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct SampleOutcome {
  std::optional<GradientEstimate> estimate;
  NfeCounter spent;  // only known for estimates that returned
};

SampleOutcome evaluate_sample(const Env& env, const Policy& policy,
                              const FlatParams& params, const Vector& x0,
                              const EstimatorSettings& settings) {
  SampleOutcome out;
  try {
    GradientEstimate est = estimate_gradient(env, policy, params, x0, settings);
    out.spent = est.nfe;
    if (!est.diverged && est.grad.allFinite() && std::isfinite(est.loss)) {
      out.estimate = std::move(est);
    } else if (est.aux) {
      // Keep the diverged Neural ODE estimate around for its aux value.
      est.grad = FlatParams();
      out.estimate = std::move(est);
    }
  } catch (const SolverError&) {
  }
  return out;
}

}  // namespace

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kCtpg: return "ctpg";
    case EstimatorKind::kBptt: return "bptt";
    case EstimatorKind::kNode: return "node";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "ctpg") return EstimatorKind::kCtpg;
  if (name == "bptt") return EstimatorKind::kBptt;
  if (name == "node") return EstimatorKind::kNode;
  throw std::invalid_argument("unknown estimator '" + name +
                              "' (expected ctpg, bptt or node)");
}

GradientEstimate estimate_gradient(const Env& env, const Policy& policy,
                                   const FlatParams& params, const Vector& x0,
                                   const EstimatorSettings& settings) {
  switch (settings.kind) {
    case EstimatorKind::kCtpg:
      return ctpg_gradient(env, policy, params, x0, settings.forward,
                           settings.backward, settings.options);
    case EstimatorKind::kBptt:
      return bptt_gradient(env, policy, params, x0, settings.bptt_step,
                           settings.options);
    case EstimatorKind::kNode:
      return node_gradient(env, policy, params, x0, settings.forward,
                           settings.options);
  }
  throw std::logic_error("unhandled estimator kind");
}

AdamState AdamState::zeros(Eigen::Index n) {
  return AdamState{Vector::Zero(n), Vector::Zero(n), 0};
}

void adam_step(AdamState& state, FlatParams& params, const FlatParams& grad,
               const AdamConfig& config) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::ostringstream os;
      os << "adam_step: non-finite gradient at index " << i << " (" << grad[i] << ")";
      throw std::invalid_argument(os.str());
    }
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  state.m = b1 * state.m + (1 - b1) * grad;
  state.v = b2 * state.v + (1 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1 - std::pow(b2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.step_size * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

FlatParams clip_grad(const FlatParams& grad, double c) {
  if (!(c > 0)) throw std::invalid_argument("clip bound must be positive");
  return grad.cwiseMax(-c).cwiseMin(c);
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& label) {
  return splitmix64(splitmix64(master) ^ fnv1a(label));
}

std::vector<Vector> sample_initial_states(const Env& env, int n, Rng& stream) {
  if (n < 1) throw std::invalid_argument("need at least one initial state");
  std::vector<Vector> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(env.sample_initial_state(stream));
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(adam.step_size > 0)) throw std::invalid_argument("adam step size must be positive");
  if (grad_clip && !(*grad_clip > 0)) throw std::invalid_argument("grad_clip must be positive");
  if (threads < 0) throw std::invalid_argument("threads must be >= 0");
}

TrainResult train_policy(const Env& env, const Policy& policy,
                         FlatParams initial_params, const TrainConfig& config) {
  config.validate();
  if (initial_params.size() != policy.num_params()) {
    throw std::invalid_argument("initial parameters do not match the policy");
  }
  using Clock = std::chrono::steady_clock;
  TrainResult result;
  result.params = std::move(initial_params);
  FlatParams& params = result.params;
  AdamState adam = AdamState::zeros(params.size());
  Rng state_stream(derive_seed(config.seed, kInitialStateStream));

  NfeCounter total;
  double elapsed = 0.0;
  const int batch = config.batch_size;
  std::vector<SampleOutcome> outcomes(batch);

  for (int it = 0; it < config.iterations; ++it) {
    const auto start = Clock::now();
    const std::vector<Vector> starts = sample_initial_states(env, batch, state_stream);

    auto run_range = [&](int lo, int hi) {
      for (int i = lo; i < hi; ++i) {
        outcomes[i] = evaluate_sample(env, policy, params, starts[i], config.estimator);
      }
    };
    const int workers = std::min(config.threads, batch);
    if (workers <= 1) {
      run_range(0, batch);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back(run_range, w * batch / workers, (w + 1) * batch / workers);
      }
      for (auto& th : pool) th.join();
    }

    // Fixed-order reduction, so the thread count never changes the numbers.
    TrainRecord rec;
    rec.iteration = it;
    FlatParams grad = FlatParams::Zero(params.size());
    double loss_sum = 0.0, aux_sum = 0.0;
    int ok = 0, with_aux = 0;
    for (const SampleOutcome& o : outcomes) {
      total += o.spent;
      if (o.estimate && o.estimate->aux) {
        aux_sum += *o.estimate->aux;
        ++with_aux;
      }
      if (!o.estimate || o.estimate->grad.size() == 0) {
        ++rec.failures;
        continue;
      }
      grad += o.estimate->grad;
      loss_sum += o.estimate->loss;
      ++ok;
    }
    if (with_aux > 0) rec.aux_mean = aux_sum / with_aux;
    if (ok > 0) {
      grad /= ok;
      rec.mean_loss = loss_sum / ok;
      rec.grad_norm = grad.norm();
      adam_step(adam, params, config.grad_clip ? clip_grad(grad, *config.grad_clip) : grad,
                config.adam);
    } else {
      rec.mean_loss = std::numeric_limits<double>::quiet_NaN();
    }
    elapsed += std::chrono::duration<double>(Clock::now() - start).count();
    rec.nfe = total;
    rec.wallclock = elapsed;
    result.history.records.push_back(std::move(rec));
  }
  return result;
}

TrainResult train_policy(const Env& env, const MlpArch& arch,
                         const TrainConfig& config) {
  MlpPolicy policy(arch, env.features());
  FlatParams init = init_params(arch, derive_seed(config.seed, kParamInitStream));
  return train_policy(env, policy, std::move(init), config);
}

}  // namespace ctpg
