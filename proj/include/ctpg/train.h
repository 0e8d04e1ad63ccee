#ifndef CTPG_TRAIN_H_
#define CTPG_TRAIN_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctpg/env.h"
#include "ctpg/estimators.h"
#include "ctpg/mlp.h"
#include "ctpg/policy.h"

namespace ctpg {

enum class EstimatorKind { kCtpg, kBptt, kNode };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);

struct EstimatorSettings {
  EstimatorKind kind = EstimatorKind::kCtpg;
  // ctpg: forward and backward solves. node: `forward` drives both passes.
  SolverConfig forward = SolverConfig::adaptive(1e-5, 1e-5);
  SolverConfig backward = SolverConfig::adaptive(1e-5, 1e-5);
  double bptt_step = 0.01;
  AdjointOptions options;
};

GradientEstimate estimate_gradient(const Env& env, const Policy& policy,
                                   const FlatParams& params, const Vector& x0,
                                   const EstimatorSettings& settings);

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  static AdamState zeros(Eigen::Index n);
};

// Bias-corrected Adam update in place. Throws std::invalid_argument naming the
// first non-finite gradient entry.
void adam_step(AdamState& state, FlatParams& params, const FlatParams& grad,
               const AdamConfig& config);

// Element-wise clamp to [-c, c].
FlatParams clip_grad(const FlatParams& grad, double c);

// Independent 64-bit seed for a named stream of a run.
std::uint64_t derive_seed(std::uint64_t master, const std::string& label);

inline constexpr const char* kInitialStateStream = "initial_states";
inline constexpr const char* kParamInitStream = "init";

std::vector<Vector> sample_initial_states(const Env& env, int n, Rng& stream);

struct TrainConfig {
  EstimatorSettings estimator;
  int batch_size = 16;
  int iterations = 200;
  AdamConfig adam;
  std::optional<double> grad_clip;
  std::uint64_t seed = 0;
  // 0 or 1 evaluates the batch on the calling thread.
  int threads = 0;

  void validate() const;
};

struct TrainRecord {
  int iteration = 0;
  double mean_loss = 0.0;  // over successful batch members, before the update
  NfeCounter nfe;          // cumulative
  double wallclock = 0.0;  // cumulative seconds
  double grad_norm = 0.0;  // of the averaged, unclipped gradient
  std::optional<double> aux_mean;
  int failures = 0;
};

struct TrainHistory {
  std::vector<TrainRecord> records;
};

struct TrainResult {
  FlatParams params;
  TrainHistory history;
};

// Each iteration samples a batch of initial states from the run's
// initial-state stream, averages the per-sample gradients in batch order,
// optionally clips, and takes one Adam step. Samples whose estimator fails
// are skipped; an iteration where every sample failed makes no update.
TrainResult train_policy(const Env& env, const Policy& policy,
                         FlatParams initial_params, const TrainConfig& config);

// Tanh MLP on the environment's features, initialized from the "init" stream.
TrainResult train_policy(const Env& env, const MlpArch& arch,
                         const TrainConfig& config);

}  // namespace ctpg

#endif  // CTPG_TRAIN_H_
