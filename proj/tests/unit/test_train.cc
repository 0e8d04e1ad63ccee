#include <cmath>
#include <limits>
#include <memory>

#include <gtest/gtest.h>

#include "ctpg/env.h"
#include "ctpg/train.h"
#include "oracles.h"

namespace ctpg {
namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Matrix eye(int n) { return Matrix::Identity(n, n); }

LqrEnv unit_lqr(double T = 25.0) {
  return lqr_make(Matrix::Zero(2, 2), eye(2), eye(2), eye(2), T, point_mass(vec({1, 1})));
}

TrainConfig gain_config(int iterations, double lr) {
  TrainConfig c;
  c.estimator.forward = c.estimator.backward = SolverConfig::adaptive(1e-8, 1e-8);
  c.batch_size = 1;
  c.iterations = iterations;
  c.adam.step_size = lr;
  return c;
}

// ---- adam / clip --------------------------------------------------------

TEST(Adam, ZeroGradientLeavesEverything) {
  AdamState s = AdamState::zeros(3);
  FlatParams p = vec({1, 2, 3});
  adam_step(s, p, Vector::Zero(3), AdamConfig{});
  EXPECT_EQ(p, vec({1, 2, 3}));
  EXPECT_EQ(s.m, Vector::Zero(3));
  EXPECT_EQ(s.v, Vector::Zero(3));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
  AdamState s = AdamState::zeros(1);
  FlatParams p = vec({0.0});
  AdamConfig c;
  c.step_size = 0.1;
  adam_step(s, p, vec({1.0}), c);
  // m_hat = 1, v_hat = 1: step = 0.1 / (1 + 1e-8).
  EXPECT_NEAR(p[0], -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientStepsTendToSign) {
  AdamState s = AdamState::zeros(2);
  FlatParams p = vec({0, 0});
  AdamConfig c;
  c.step_size = 0.01;
  FlatParams prev = p;
  for (int i = 0; i < 2000; ++i) {
    prev = p;
    adam_step(s, p, vec({3.0, -1e-3}), c);
  }
  EXPECT_NEAR(p[0] - prev[0], -0.01, 1e-6);
  EXPECT_NEAR(p[1] - prev[1], 0.01, 1e-4);
}

TEST(Adam, NonFiniteGradientNamesIndex) {
  AdamState s = AdamState::zeros(3);
  FlatParams p = vec({1, 2, 3});
  try {
    adam_step(s, p, vec({0, std::numeric_limits<double>::quiet_NaN(), 1}), AdamConfig{});
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, vec({1, 2, 3}));
  EXPECT_THROW(adam_step(s, p, vec({1, 2}), AdamConfig{}), std::invalid_argument);
}

TEST(Clip, Examples) {
  EXPECT_EQ(clip_grad(vec({0.5, -1.0}), 1.0), vec({0.5, -1.0}));
  EXPECT_EQ(clip_grad(vec({3, -2}), 1.0), vec({1, -1}));
  const Vector g = vec({7, -0.1, -9, 0.99});
  EXPECT_EQ(clip_grad(clip_grad(g, 1.0), 1.0), clip_grad(g, 1.0));
}

// ---- seeds and sampling -------------------------------------------------

TEST(Seeds, LabelsGiveIndependentDeterministicStreams) {
  EXPECT_EQ(derive_seed(5, kInitialStateStream), derive_seed(5, kInitialStateStream));
  EXPECT_NE(derive_seed(5, kInitialStateStream), derive_seed(5, kParamInitStream));
  EXPECT_NE(derive_seed(5, kInitialStateStream), derive_seed(6, kInitialStateStream));
}

TEST(Sampling, SameStreamStateSameList) {
  const auto env = diffdrive_make(0.5, 0.1, 5.0, diffdrive_sampler());
  Rng a(42), b(42);
  const auto xs = sample_initial_states(env, 8, a);
  const auto ys = sample_initial_states(env, 8, b);
  ASSERT_EQ(xs.size(), 8u);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(xs[i], ys[i]);
}

TEST(Sampling, AdvancesByExactlyNDraws) {
  const auto env = diffdrive_make(0.5, 0.1, 5.0, diffdrive_sampler());
  Rng a(1), b(1);
  auto first = sample_initial_states(env, 3, a);
  const auto rest = sample_initial_states(env, 2, a);
  const auto all = sample_initial_states(env, 5, b);
  first.insert(first.end(), rest.begin(), rest.end());
  for (int i = 0; i < 5; ++i) EXPECT_EQ(first[i], all[i]);
}

TEST(Sampling, LqrPointMass) {
  const LqrEnv env = unit_lqr();
  Rng rng(0);
  for (const auto& x : sample_initial_states(env, 4, rng)) EXPECT_EQ(x, vec({1, 1}));
}

TEST(Sampling, DiffDriveBox) {
  const auto env = diffdrive_make(0.5, 0.1, 5.0, diffdrive_sampler(1.5));
  Rng rng(9);
  for (const auto& x : sample_initial_states(env, 64, rng)) {
    EXPECT_LE(x.head(2).cwiseAbs().maxCoeff(), 1.5);
  }
  EXPECT_THROW(sample_initial_states(env, 0, rng), std::invalid_argument);
}

// ---- training loop ------------------------------------------------------

TEST(Train, ZeroCostNeverMoves) {
  const auto env = finite_difference_adapter(
      2, 2, [](const Vector& x, const Vector& u) { return Vector(-x + u); },
      [](const Vector&, const Vector&) { return 0.0; }, [](const Vector&) { return 0.0; }, 1e-6,
      1.0, uniform_box(vec({-1, -1}), vec({1, 1})));
  MlpPolicy policy(MlpArch({2, 4, 2}), FeatureMap::identity(2));
  const FlatParams p0 = init_params(policy.arch(), 0);
  TrainConfig c;
  c.iterations = 5;
  c.batch_size = 3;
  const TrainResult r = train_policy(env, policy, p0, c);
  EXPECT_EQ(r.params, p0);
  ASSERT_EQ(r.history.records.size(), 5u);
  for (const auto& rec : r.history.records) EXPECT_EQ(rec.mean_loss, 0.0);
}

TEST(Train, LqrGainConvergesToOne) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  const TrainResult r = train_policy(env, policy, vec({0.2}), gain_config(200, 0.05));
  EXPECT_NEAR(r.params[0], 1.0, 0.05);
}

TEST(Train, DescentAfterWarmup) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  const TrainResult r = train_policy(env, policy, vec({0.2}), gain_config(60, 0.01));
  const auto& recs = r.history.records;
  for (size_t i = 11; i < recs.size(); ++i)
    EXPECT_LE(recs[i].mean_loss, recs[i - 1].mean_loss + 1e-12) << i;
}

TEST(Train, HistoryCumulativeAndOrdered) {
  const LqrEnv env = unit_lqr(5.0);
  ScalarGainPolicy policy(2);
  const TrainResult r = train_policy(env, policy, vec({0.5}), gain_config(10, 0.05));
  const auto& recs = r.history.records;
  ASSERT_EQ(recs.size(), 10u);
  for (size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].iteration, static_cast<int>(i));
    if (i == 0) continue;
    EXPECT_GT(recs[i].nfe.total(), recs[i - 1].nfe.total());
    EXPECT_GE(recs[i].nfe.n_f, recs[i - 1].nfe.n_f);
    EXPECT_GE(recs[i].wallclock, recs[i - 1].wallclock);
  }
  EXPECT_FALSE(recs[0].aux_mean.has_value());
}

TEST(Train, BitwiseDeterministicSingleThreaded) {
  const auto env = diffdrive_make(0.5, 0.1, 1.0, diffdrive_sampler());
  TrainConfig c;
  c.iterations = 4;
  c.batch_size = 4;
  c.adam.step_size = 0.01;
  c.grad_clip = 1.0;
  c.seed = 3;
  const MlpArch arch({7, 8, 2});
  const TrainResult a = train_policy(env, arch, c);
  const TrainResult b = train_policy(env, arch, c);
  EXPECT_EQ(a.params, b.params);
  for (size_t i = 0; i < a.history.records.size(); ++i) {
    EXPECT_EQ(a.history.records[i].mean_loss, b.history.records[i].mean_loss);
    EXPECT_EQ(a.history.records[i].nfe, b.history.records[i].nfe);
    EXPECT_EQ(a.history.records[i].grad_norm, b.history.records[i].grad_norm);
  }
  // Fixed-order reduction: threads do not change the numbers.
  c.threads = 3;
  const TrainResult t = train_policy(env, arch, c);
  EXPECT_EQ(a.params, t.params);
}

TEST(Train, InitialStatesIndependentOfEstimator) {
  auto seen = std::make_shared<std::vector<Vector>>();
  const auto box = diffdrive_sampler();
  InitialStateSampler recording = [seen, box](Rng& rng) {
    Vector x = box(rng);
    seen->push_back(x);
    return x;
  };
  const auto env = diffdrive_make(0.5, 0.1, 0.5, recording);
  TrainConfig c;
  c.iterations = 3;
  c.batch_size = 5;
  c.seed = 11;
  const MlpArch arch({7, 4, 2});
  train_policy(env, arch, c);
  const std::vector<Vector> ctpg_states = *seen;
  seen->clear();
  c.estimator.kind = EstimatorKind::kBptt;
  c.estimator.bptt_step = 0.05;
  train_policy(env, arch, c);
  ASSERT_EQ(seen->size(), 15u);
  for (size_t i = 0; i < seen->size(); ++i) EXPECT_EQ((*seen)[i], ctpg_states[i]);
  // Batch size does not shift the stream either: the first states agree.
  seen->clear();
  c.batch_size = 2;
  train_policy(env, arch, c);
  EXPECT_EQ((*seen)[0], ctpg_states[0]);
  EXPECT_EQ((*seen)[1], ctpg_states[1]);
}

TEST(Train, ClippedUpdatesBounded) {
  const auto env = diffdrive_make(0.5, 0.1, 1.0, diffdrive_sampler());
  MlpPolicy policy(MlpArch({7, 8, 2}), env.features());
  FlatParams p = init_params(policy.arch(), 0);
  TrainConfig c;
  c.batch_size = 2;
  c.adam.step_size = 0.02;
  c.grad_clip = 1.0;
  // Compare consecutive runs of n and n+1 iterations: they share a prefix.
  FlatParams prev = p;
  for (int it = 1; it <= 6; ++it) {
    c.iterations = it;
    const FlatParams now = train_policy(env, policy, p, c).params;
    EXPECT_LE((now - prev).cwiseAbs().maxCoeff(), 1.1 * c.adam.step_size) << it;
    prev = now;
  }
}

TEST(Train, FailedSamplesAreSkipped) {
  // Dynamics blow up for starting states with x[1] > 0.5: those Euler
  // rollouts diverge, the others are fine.
  auto f = [](const Vector& x, const Vector& u) {
    Vector dx = -x + u;
    if (x[1] > 0.5) dx[0] = std::numeric_limits<double>::quiet_NaN();
    return dx;
  };
  auto w = [](const Vector& x, const Vector& u) { return x.squaredNorm() + u.squaredNorm(); };
  const auto env = finite_difference_adapter(2, 2, f, w, [](const Vector&) { return 0.0; }, 1e-6,
                                             1.0, uniform_box(vec({0, 0}), vec({1, 1})));
  LinearPolicy policy(2, 2);
  TrainConfig c;
  c.estimator.kind = EstimatorKind::kBptt;
  c.estimator.bptt_step = 0.1;
  c.iterations = 5;
  c.batch_size = 8;
  const TrainResult r = train_policy(env, policy, vec({0.1, 0, 0, 0.1}), c);
  int failures = 0;
  for (const auto& rec : r.history.records) {
    failures += rec.failures;
    EXPECT_TRUE(std::isfinite(rec.mean_loss));
  }
  EXPECT_GT(failures, 0);
  EXPECT_NE(r.params, vec({0.1, 0, 0, 0.1}));
}

TEST(Train, AllFailedIterationMakesNoUpdate) {
  auto f = [](const Vector& x, const Vector&) {
    return Vector(Vector::Constant(x.size(), std::numeric_limits<double>::quiet_NaN()));
  };
  auto w = [](const Vector& x, const Vector&) { return x.squaredNorm(); };
  const auto env = finite_difference_adapter(2, 2, f, w, [](const Vector&) { return 0.0; }, 1e-6,
                                             1.0, point_mass(vec({1, 1})));
  LinearPolicy policy(2, 2);
  TrainConfig c;
  c.iterations = 2;
  c.batch_size = 2;
  const TrainResult r = train_policy(env, policy, vec({1, 0, 0, 1}), c);
  EXPECT_EQ(r.params, vec({1, 0, 0, 1}));
  for (const auto& rec : r.history.records) {
    EXPECT_TRUE(std::isnan(rec.mean_loss));
    EXPECT_EQ(rec.failures, 2);
  }
}

TEST(Train, NodeRecordsAux) {
  const LqrEnv env = unit_lqr(5.0);
  ScalarGainPolicy policy(2);
  TrainConfig c = gain_config(3, 0.05);
  c.estimator.kind = EstimatorKind::kNode;
  const TrainResult r = train_policy(env, policy, vec({0.5}), c);
  for (const auto& rec : r.history.records) ASSERT_TRUE(rec.aux_mean.has_value());
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.grad_clip = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_estimator(to_string(EstimatorKind::kNode)), EstimatorKind::kNode);
  EXPECT_THROW(parse_estimator("reinforce"), std::invalid_argument);
}

TEST(Train, DiffDriveLossHalves) {
  const auto env = diffdrive_make(0.5, 0.1, 5.0, diffdrive_sampler());
  TrainConfig c;
  c.estimator.forward = c.estimator.backward = SolverConfig::adaptive(1e-3, 1e-3);
  c.iterations = 200;
  c.batch_size = 16;
  c.adam.step_size = 0.01;
  c.grad_clip = 1.0;
  const TrainResult r = train_policy(env, MlpArch({7, 64, 64, 2}), c);
  const auto& recs = r.history.records;
  double tail = 0.0;
  for (size_t i = recs.size() - 10; i < recs.size(); ++i) tail += recs[i].mean_loss / 10;
  EXPECT_LE(tail, 0.5 * recs.front().mean_loss);
}

}  // namespace
}  // namespace ctpg
