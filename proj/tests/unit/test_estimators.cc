#include <algorithm>
#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "ctpg/env.h"
#include "ctpg/estimators.h"
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

const SolverConfig kTight = SolverConfig::adaptive(1e-10, 1e-10);

LqrEnv unit_lqr(double T = 25.0) {
  return lqr_make(Matrix::Zero(2, 2), eye(2), eye(2), eye(2), T, point_mass(vec({1, 1})));
}

// Lightly damped oscillator with a single input; enough coupling for the
// policy chain terms to matter.
LqrEnv oscillator(double T) {
  Matrix A(2, 2), B(2, 1);
  A << 0, 1, -1, -0.1;
  B << 0, 1;
  return lqr_make(A, B, eye(2), 0.5 * eye(1), T, point_mass(vec({1, 0})));
}

FiniteDifferenceEnv costless(double T, FiniteDifferenceEnv::Dynamics f) {
  return finite_difference_adapter(
      2, 2, std::move(f), [](const Vector&, const Vector&) { return 0.0; },
      [](const Vector&) { return 0.0; }, 1e-6, T, point_mass(vec({1, -1})));
}

FiniteDifferenceEnv::Dynamics decay() {
  return [](const Vector& x, const Vector& u) { return Vector(-x + u); };
}

MlpPolicy mlp_for(const Env& env, std::vector<int> hidden) {
  std::vector<int> sizes{env.features().feature_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(env.dim_u());
  return MlpPolicy(MlpArch(sizes), env.features());
}

FlatParams params_for(const MlpPolicy& p, std::uint64_t seed) {
  return init_params(p.arch(), seed);
}

// ---- rollout ------------------------------------------------------------

TEST(Rollout, ZeroHorizonIsTerminalCost) {
  const auto env = finite_difference_adapter(
      2, 2, decay(), [](const Vector& x, const Vector&) { return x.squaredNorm(); },
      [](const Vector& x) { return 7 * x[0]; }, 1e-6, 0.0, point_mass(vec({1, 1})));
  ScalarGainPolicy policy(2);
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, vec({1.0}), vec({2, 3}), kTight, c);
  EXPECT_EQ(r.loss, 14.0);
  EXPECT_FALSE(r.trajectory.has_value());
  EXPECT_EQ(c.total(), 0);
}

TEST(Rollout, LqrClosedForm) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, vec({1.0}), vec({1, 1}),
                                 SolverConfig::adaptive(1e-8, 1e-8), c);
  EXPECT_NEAR(r.loss, 2 * (1 - std::exp(-50.0)), 1e-5);
  EXPECT_GT(c.n_f, 0);
  EXPECT_EQ(c.n_dfdx + c.n_dfdu, 0);
  ASSERT_TRUE(r.trajectory.has_value());
  EXPECT_EQ(r.trajectory->dim(), 2);  // cost coordinate stripped
}

TEST(Rollout, TerminalOnlyLoss) {
  const auto env = finite_difference_adapter(
      2, 2, decay(), [](const Vector&, const Vector&) { return 0.0; },
      [](const Vector& x) { return x.squaredNorm(); }, 1e-6, 1.5, point_mass(vec({1, 1})));
  ScalarGainPolicy policy(2);  // u = 0 at k = 0
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, vec({0.0}), vec({1, -2}), kTight, c);
  EXPECT_NEAR(r.loss, 5 * std::exp(-3.0), 1e-9);
}

TEST(Rollout, IncompatiblePolicyThrows) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(3);
  NfeCounter c;
  EXPECT_THROW(rollout_loss(env, policy, vec({1.0}), vec({1, 1}), kTight, c),
               std::invalid_argument);
}

// ---- adjoint / gradient right-hand sides --------------------------------

TEST(AdjointRhs, ZeroAdjointZeroCost) {
  const auto env = costless(1.0, decay());
  LinearPolicy policy(2, 2);
  const FlatParams p = vec({0.5, 0.1, -0.2, 0.3});
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, p, vec({1, -1}), kTight, c);
  EXPECT_EQ(adjoint_rhs(env, policy, p, *r.trajectory, Vector::Zero(2), 0.4, c), Vector::Zero(2));
  EXPECT_EQ(gradient_rhs(env, policy, p, *r.trajectory, Vector::Zero(2), 0.4, c),
            Vector::Zero(4));
}

TEST(AdjointRhs, LqrSymbolicExpansion) {
  Matrix Q(2, 2), R(2, 2), K(2, 2);
  Q << 2, 0.5, 0.5, 1;
  R << 1.5, 0, 0, 0.5;
  K << 1, 0.3, -0.2, 2;
  const LqrEnv env = lqr_make(Matrix::Zero(2, 2), eye(2), Q, R, 2.0, point_mass(vec({1, 1})));
  LinearPolicy policy(2, 2);
  const FlatParams p = LinearPolicy::flatten(K);
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, p, vec({1, 1}), kTight, c);
  const Vector alpha = vec({0.7, -1.1});
  const double t = 0.8;
  const Vector x = (*r.trajectory)(t);
  const Vector want = K.transpose() * alpha - 2 * Q * x - 2 * K.transpose() * R * K * x;
  NfeCounter before = c;
  const Vector got = adjoint_rhs(env, policy, p, *r.trajectory, alpha, t, c);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(c.n_dfdx - before.n_dfdx, 1);
  EXPECT_EQ(c.n_dfdu - before.n_dfdu, 1);
  EXPECT_EQ(c.n_f, before.n_f);
}

TEST(AdjointRhs, OutsideTrajectorySpanThrows) {
  const LqrEnv env = unit_lqr(1.0);
  ScalarGainPolicy policy(2);
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, vec({1.0}), vec({1, 1}), kTight, c);
  EXPECT_THROW(adjoint_rhs(env, policy, vec({1.0}), *r.trajectory, vec({1, 1}), 1.5, c),
               std::out_of_range);
}

TEST(GradientRhs, ZeroParamsReduceToVjpOfBTransposeAlpha) {
  const LqrEnv env = unit_lqr(1.0);
  MlpPolicy policy(MlpArch({2, 4, 2}), FeatureMap::identity(2));
  const FlatParams p = FlatParams::Zero(policy.num_params());
  NfeCounter c;
  const Rollout r = rollout_loss(env, policy, p, vec({1, 1}), kTight, c);
  const Vector alpha = vec({0.3, -0.9});
  const double t = 0.25;
  const FlatParams got = gradient_rhs(env, policy, p, *r.trajectory, alpha, t, c);
  const FlatParams want = -policy.vjp_params(p, (*r.trajectory)(t), alpha);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AdjointRhs, MatchesPerturbedRolloutOracle) {
  const LqrEnv env = oscillator(2.0);
  const MlpPolicy policy = mlp_for(env, {6});
  const FlatParams p = 2.0 * params_for(policy, 1);
  const testing::TwoPass two = testing::two_pass_ctpg(env, policy, p, vec({1, 0}), kTight);
  for (double t : {0.0, 0.5, 1.3}) {
    const Vector oracle = testing::perturbed_rollout_adjoint(env, policy, p, vec({1, 0}), t, 1e-3, 1e-5);
    EXPECT_LT(relative_error(two.adjoint(t), oracle), 1e-3) << "t=" << t;
  }
  const GradientEstimate fused = ctpg_gradient(env, policy, p, vec({1, 0}), kTight, kTight);
  const Vector at0 = testing::perturbed_rollout_adjoint(env, policy, p, vec({1, 0}), 0.0, 1e-3, 1e-5);
  EXPECT_LT(relative_error(fused.initial_adjoint, at0), 1e-3);
}

TEST(AdjointRhs, DroppingPolicyChainIsWrong) {
  const LqrEnv env = oscillator(2.0);
  const MlpPolicy policy = mlp_for(env, {6});
  const FlatParams p = 2.0 * params_for(policy, 1);
  AdjointOptions drop;
  drop.drop_policy_chain = true;
  const GradientEstimate bad = ctpg_gradient(env, policy, p, vec({1, 0}), kTight, kTight, drop);
  const FlatParams oracle = fd_gradient_oracle(env, policy, p, vec({1, 0}), 1e-3, 1e-5);
  EXPECT_GT(relative_error(bad.grad, oracle), 1e-2);
}

// ---- ctpg ---------------------------------------------------------------

TEST(Ctpg, ZeroCostGivesExactZero) {
  const auto env = costless(2.0, decay());
  LinearPolicy policy(2, 2);
  const GradientEstimate g =
      ctpg_gradient(env, policy, vec({0.5, 0.1, -0.2, 0.3}), vec({1, -1}), kTight, kTight);
  EXPECT_EQ(g.grad, Vector::Zero(4));
  EXPECT_EQ(g.loss, 0.0);
}

TEST(Ctpg, ScalarGainClosedForm) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  for (double k : {0.5, 2.0, 3.0}) {
    const GradientEstimate g = ctpg_gradient(env, policy, vec({k}), vec({1, 1}), kTight, kTight);
    EXPECT_NEAR(g.loss, testing::lqr_gain_loss(k, 25.0), 1e-6) << k;
    EXPECT_NEAR(g.grad[0], testing::lqr_gain_loss_derivative(k, 25.0), 1e-5) << k;
  }
  const GradientEstimate at2 = ctpg_gradient(env, policy, vec({2.0}), vec({1, 1}), kTight, kTight);
  EXPECT_NEAR(at2.loss, 2.5, 1e-4);
  EXPECT_NEAR(at2.grad[0], 0.75, 1e-3);
  const GradientEstimate at1 = ctpg_gradient(env, policy, vec({1.0}), vec({1, 1}), kTight, kTight);
  EXPECT_LT(std::abs(at1.grad[0]), 1e-6);
}

TEST(Ctpg, DiffDriveMatchesOracle) {
  const auto env = diffdrive_make(0.5, 0.1, 1.0, diffdrive_sampler());
  const MlpPolicy policy = mlp_for(env, {4});
  const FlatParams p = params_for(policy, 2);
  const Vector x0 = vec({1.2, -0.7, 0.4, 0, 0});
  const SolverConfig tol8 = SolverConfig::adaptive(1e-8, 1e-8);
  const GradientEstimate g = ctpg_gradient(env, policy, p, x0, tol8, tol8);
  const FlatParams oracle = fd_gradient_oracle(env, policy, p, x0, 1e-3, 1e-5);
  EXPECT_LT(relative_error(g.grad, oracle), 1e-4);
  EXPECT_GT(g.forward_knots, 2);
  EXPECT_GT(g.backward_knots, 2);
  EXPECT_GT(g.nfe.n_dfdx, 0);
  EXPECT_EQ(g.nfe.n_dfdx, g.nfe.n_dfdu);
}

TEST(Ctpg, FusedMatchesTwoPass) {
  const auto dd = diffdrive_make(0.5, 0.1, 1.0, diffdrive_sampler());
  const MlpPolicy dd_policy = mlp_for(dd, {8});
  const FlatParams dd_p = params_for(dd_policy, 4);
  const Vector dd_x0 = vec({-1, 0.5, 2.0, 0, 0});
  const auto two = testing::two_pass_ctpg(dd, dd_policy, dd_p, dd_x0, kTight);
  const auto fused = ctpg_gradient(dd, dd_policy, dd_p, dd_x0, kTight, kTight);
  EXPECT_LT(relative_error(fused.grad, two.grad), 1e-6);

  const LqrEnv lqr = unit_lqr();
  MlpPolicy lqr_policy(MlpArch({2, 8, 2}), FeatureMap::identity(2));
  const FlatParams lqr_p = init_params(lqr_policy.arch(), 5);
  const auto two_l = testing::two_pass_ctpg(lqr, lqr_policy, lqr_p, vec({1, 1}), kTight);
  const auto fused_l = ctpg_gradient(lqr, lqr_policy, lqr_p, vec({1, 1}), kTight, kTight);
  EXPECT_LT(relative_error(fused_l.grad, two_l.grad), 1e-6);
}

TEST(Ctpg, DefaultGBlockWeighting) {
  const auto env = diffdrive_make(0.5, 0.1, 1.0, diffdrive_sampler());
  const MlpPolicy policy = mlp_for(env, {16, 16});
  const FlatParams p = params_for(policy, 0);
  const Vector x0 = vec({1, 1, 0.5, 0, 0});
  const SolverConfig fwd = SolverConfig::adaptive(1e-6, 1e-6);
  const int n = policy.num_params();

  SolverConfig weighted = fwd;
  weighted.error_weights = Vector::Ones(env.dim_x() + n);
  weighted.error_weights.tail(n).setConstant(1.0 / std::sqrt(double(n)));
  const auto implicit = ctpg_gradient(env, policy, p, x0, fwd, fwd);
  const auto explicit_w = ctpg_gradient(env, policy, p, x0, fwd, weighted);
  EXPECT_EQ(implicit.grad, explicit_w.grad);
  EXPECT_EQ(implicit.nfe, explicit_w.nfe);

}

TEST(Ctpg, NfeIsSumOfPasses) {
  const LqrEnv env = unit_lqr(5.0);
  ScalarGainPolicy policy(2);
  const SolverConfig cfg = SolverConfig::rk4(0.1);
  const auto g = ctpg_gradient(env, policy, vec({1.0}), vec({1, 1}), cfg, cfg);
  // 50 RK4 steps each way: 200 f-calls forward, 200 Jacobian pairs backward.
  EXPECT_EQ(g.nfe, (NfeCounter{200, 200, 200}));
  EXPECT_EQ(g.forward_knots, 51);
  EXPECT_EQ(g.backward_knots, 51);
}

// ---- bptt ---------------------------------------------------------------

struct Case {
  std::unique_ptr<Env> env;
  Vector x0;
};

std::vector<Case> bptt_cases() {
  std::vector<Case> out;
  out.push_back({std::make_unique<DiffDriveEnv>(0.5, 0.1, 1.0, diffdrive_sampler()),
                 vec({1.2, -0.7, 0.4, 0, 0})});
  out.push_back({std::make_unique<LqrEnv>(oscillator(1.0)), vec({1, 0})});
  out.push_back({std::make_unique<ElectricEnv>(ElectricParams{}, 1.0, electric_sampler()),
                 vec({0.4, 0.6, 0, 0, 0})});
  return out;
}

TEST(Bptt, ExactGradientOfDiscreteLoss) {
  for (const auto& c : bptt_cases()) {
    const MlpPolicy policy = mlp_for(*c.env, {8});
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const FlatParams p = params_for(policy, seed);
      const GradientEstimate g = bptt_gradient(*c.env, policy, p, c.x0, 0.01);
      const Vector fd = testing::central_fd(
          [&](const Vector& q) { return testing::discrete_loss(*c.env, policy, q, c.x0, 0.01); },
          p, 1e-6);
      EXPECT_LT(relative_error(g.grad, fd), 1e-5) << c.env->name() << " seed " << seed;
      EXPECT_NEAR(g.loss, testing::discrete_loss(*c.env, policy, p, c.x0, 0.01), 1e-12);
    }
  }
}

TEST(Bptt, EulerLossMatchesIndependentLoop) {
  const auto c = bptt_cases();
  const MlpPolicy policy = mlp_for(*c[0].env, {8});
  const FlatParams p = params_for(policy, 0);
  for (double h : {0.01, 0.03, 0.3}) {  // 0.03 and 0.3 leave a truncated last step
    EXPECT_NEAR(euler_loss(*c[0].env, policy, p, c[0].x0, h),
                testing::discrete_loss(*c[0].env, policy, p, c[0].x0, h), 1e-12);
  }
}

TEST(Bptt, CountsOneJacobianPairPerStep) {
  const LqrEnv env = unit_lqr(1.0);
  ScalarGainPolicy policy(2);
  const auto g = bptt_gradient(env, policy, vec({1.0}), vec({1, 1}), 0.1);
  EXPECT_EQ(g.nfe, (NfeCounter{10, 10, 10}));
}

TEST(Bptt, ConvergesToContinuousGradient) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  // Euler on x' = -kx gives L_h(k) = L(k) / (1 - hk/2) for long horizons, so
  // the gradient bias is h*k to leading order: 2e-4 at h = 1e-4, k = 2.
  const auto cont = ctpg_gradient(env, policy, vec({2.0}), vec({1, 1}), kTight, kTight);
  for (double h : {1e-3, 1e-4}) {
    const auto fine = bptt_gradient(env, policy, vec({2.0}), vec({1, 1}), h);
    EXPECT_NEAR(fine.grad[0] - cont.grad[0], h * 2.0, 0.05 * h * 2.0) << h;
  }
  EXPECT_LT(std::abs(bptt_gradient(env, policy, vec({2.0}), vec({1, 1}), 2e-5).grad[0] -
                     cont.grad[0]), 1e-4);
  double prev = 1e9;
  for (double h : {0.5, 0.25, 0.1, 0.05, 0.01}) {
    const double err = std::abs(bptt_gradient(env, policy, vec({2.0}), vec({1, 1}), h).grad[0] -
                                cont.grad[0]);
    EXPECT_LT(err, prev) << h;
    prev = err;
  }
}

TEST(Bptt, ZeroCostGivesExactZero) {
  const auto env = costless(1.0, decay());
  LinearPolicy policy(2, 2);
  const auto g = bptt_gradient(env, policy, vec({0.5, 0.1, -0.2, 0.3}), vec({1, -1}), 0.01);
  EXPECT_EQ(g.grad, Vector::Zero(4));
}

TEST(Bptt, DivergenceReportsStep) {
  const LqrEnv env = unit_lqr(1.0);
  ScalarGainPolicy policy(2);
  // k = 1e155 with h = 0.1: |1 - hk| ~ 1e154 per step overflows in a few steps.
  EXPECT_THROW(bptt_gradient(env, policy, vec({1e155}), vec({1, 1}), 0.1), SolverError);
  EXPECT_THROW(bptt_gradient(env, policy, vec({1.0}), vec({1, 1}), 0.0), std::invalid_argument);
}

// ---- neural ode ---------------------------------------------------------

TEST(Node, StaticDynamicsReconstructExactly) {
  const auto env = finite_difference_adapter(
      2, 2, [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); },
      [](const Vector& x, const Vector& u) { return x.squaredNorm() + u.squaredNorm(); },
      [](const Vector&) { return 0.0; }, 1e-6, 3.0, point_mass(vec({1, 1})));
  ScalarGainPolicy policy(2);
  const auto g = node_gradient(env, policy, vec({0.7}), vec({1, 2}), kTight);
  ASSERT_TRUE(g.aux.has_value());
  EXPECT_EQ(*g.aux, 0.0);
  EXPECT_FALSE(g.diverged);
}

TEST(Node, ResolvedLqrStationary) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  const auto g = node_gradient(env, policy, vec({0.0}), vec({1, 1}), kTight);
  EXPECT_LT(*g.aux, 1e-10);
  // L(k) near 0 is dominated by the 2T state cost; dL/dk = -2T^2 * ... is finite.
  const auto ref = ctpg_gradient(env, policy, vec({0.0}), vec({1, 1}), kTight, kTight);
  EXPECT_LT(relative_error(g.grad, ref.grad), 1e-6);
}

TEST(Node, StableClosedLoopIsUnrecoverable) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  const auto g = node_gradient(env, policy, vec({1.0}), vec({1, 1}),
                               SolverConfig::adaptive(1e-8, 1e-8));
  ASSERT_TRUE(g.aux.has_value());
  EXPECT_GT(*g.aux, 100 * 2.0);
}

TEST(Node, AuxMonotoneInGain) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  double prev = -1.0;
  for (double k : {0.0, 0.5, 1.0, 2.0}) {
    const auto g = node_gradient(env, policy, vec({k}), vec({1, 1}), SolverConfig::adaptive(1e-6, 1e-6));
    ASSERT_TRUE(g.aux.has_value());
    EXPECT_GE(*g.aux, prev) << k;
    prev = *g.aux;
  }
}

TEST(Node, BackwardDivergenceIsData) {
  // Strongly contracting loop over a long horizon: the reverse solve blows up.
  const LqrEnv env = unit_lqr(400.0);
  ScalarGainPolicy policy(2);
  const auto g = node_gradient(env, policy, vec({5.0}), vec({1, 1}), SolverConfig::adaptive(1e-6, 1e-6));
  EXPECT_TRUE(g.diverged);
  ASSERT_TRUE(g.aux.has_value());
  EXPECT_TRUE(std::isinf(*g.aux));
}

// ---- oracle and agreement ----------------------------------------------

TEST(Oracle, ZeroCostIsZero) {
  const auto env = costless(1.0, decay());
  LinearPolicy policy(2, 2);
  EXPECT_EQ(fd_gradient_oracle(env, policy, vec({0.5, 0.1, -0.2, 0.3}), vec({1, -1}), 1e-2, 1e-5),
            Vector::Zero(4));
}

TEST(Oracle, AgreesWithBpttAtFineStep) {
  const LqrEnv env = unit_lqr(5.0);
  ScalarGainPolicy policy(2);
  const double h = 1e-3;
  const auto oracle = fd_gradient_oracle(env, policy, vec({2.0}), vec({1, 1}), h, 1e-5);
  const auto bptt = bptt_gradient(env, policy, vec({2.0}), vec({1, 1}), h);
  EXPECT_LT(std::abs(oracle[0] - bptt.grad[0]), 10 * h);
}

TEST(Agreement, ThreeEstimatorsOnShortHorizons) {
  for (const auto& c : bptt_cases()) {
    if (c.env->name() == "electric") continue;
    const MlpPolicy policy = mlp_for(*c.env, {6});
    const FlatParams p = params_for(policy, 7);
    const SolverConfig tol8 = SolverConfig::adaptive(1e-8, 1e-8);
    const auto ctpg = ctpg_gradient(*c.env, policy, p, c.x0, tol8, tol8).grad;
    const auto bptt = bptt_gradient(*c.env, policy, p, c.x0, 1e-4).grad;
    const auto oracle = fd_gradient_oracle(*c.env, policy, p, c.x0, 1e-3, 1e-5);
    EXPECT_LT(relative_error(ctpg, oracle), 1e-3) << c.env->name();
    EXPECT_LT(relative_error(bptt, oracle), 1e-3) << c.env->name();
    EXPECT_LT(relative_error(bptt, ctpg), 1e-3) << c.env->name();
  }
}

TEST(Agreement, ZeroGradientAtOptimalGain) {
  const LqrEnv env = unit_lqr();
  LinearPolicy policy(2, 2);
  const FlatParams K = LinearPolicy::flatten(lqr_optimal_gain(env.A(), env.B(), env.Q(), env.R()));
  EXPECT_LT(ctpg_gradient(env, policy, K, vec({1, 1}), kTight, kTight).grad.norm(), 1e-4);
  EXPECT_LT(node_gradient(env, policy, K, vec({1, 1}), kTight).grad.norm(), 1e-4);
  // The Euler discretization shifts the optimum by O(h).
  EXPECT_LT(bptt_gradient(env, policy, K, vec({1, 1}), 1e-5).grad.norm(), 1e-4);
}

// ---- reverse-process spectrum ------------------------------------------

TEST(Spectrum, LqrUnitGain) {
  const LqrEnv env = unit_lqr();
  ScalarGainPolicy policy(2);
  auto eigs = reverse_jacobian_eigs(env, policy, vec({1.0}), vec({1, 1}), vec({0.3, -0.2}));
  ASSERT_EQ(eigs.size(), 5u);
  std::sort(eigs.begin(), eigs.end(), [](auto a, auto b) { return a.real() < b.real(); });
  const double want[] = {-1, -1, 0, 1, 1};
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(eigs[i].real(), want[i], 1e-6);
    EXPECT_NEAR(eigs[i].imag(), 0.0, 1e-6);
  }
}

TEST(Spectrum, RandomSystemsPair) {
  Rng rng(99);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix A(3, 3), B(3, 2);
    for (auto& e : A.reshaped()) e = n01(rng);
    for (auto& e : B.reshaped()) e = n01(rng);
    const LqrEnv env = lqr_make(A, B, eye(3), eye(2), 1.0, point_mass(Vector::Zero(3)));
    MlpPolicy policy(MlpArch({3, 4, 2}), FeatureMap::identity(3));
    const FlatParams p = init_params(policy.arch(), trial);
    Vector x(3), a(3);
    for (auto& e : x) e = n01(rng);
    for (auto& e : a) e = n01(rng);
    const auto eigs = reverse_jacobian_eigs(env, policy, p, x, a);
    ASSERT_EQ(eigs.size(), static_cast<size_t>(6 + policy.num_params()));
    const SpectrumPairing pr = check_pairing(eigs);
    EXPECT_LT(pr.residual, 1e-6) << trial;
    EXPECT_GE(pr.near_zero, policy.num_params());
  }
}

TEST(Spectrum, ZeroDynamicsAllZero) {
  const auto env = costless(1.0, [](const Vector& x, const Vector&) {
    return Vector(Vector::Zero(x.size()));
  });
  LinearPolicy policy(2, 2);
  for (const auto& l : reverse_jacobian_eigs(env, policy, vec({1, 0, 0, 1}), vec({1, 1}), vec({1, 1})))
    EXPECT_LT(std::abs(l), 1e-6);
}

TEST(Spectrum, StableForwardMeansUnstableReverse) {
  const LqrEnv env = oscillator(1.0);
  LinearPolicy policy(2, 1);
  const FlatParams K = LinearPolicy::flatten(lqr_optimal_gain(env.A(), env.B(), env.Q(), env.R()));
  const auto pr = check_pairing(reverse_jacobian_eigs(env, policy, K, vec({1, 0}), vec({0, 1})));
  EXPECT_GT(pr.max_real, 0.0);
  EXPECT_LT(pr.residual, 1e-6);
}

TEST(Spectrum, PairingDetectsUnpairedSpectrum) {
  using C = std::complex<double>;
  EXPECT_LT(check_pairing({C(1, 0), C(-1, 0), C(0, 0)}).residual, 1e-15);
  EXPECT_GT(check_pairing({C(1, 0), C(-2, 0)}).residual, 0.5);
  EXPECT_EQ(check_pairing({C(0, 0), C(1e-9, 0), C(2, 0), C(-2, 0)}).near_zero, 2);
}

TEST(RelativeError, FloorAndZeroReference) {
  EXPECT_DOUBLE_EQ(relative_error(vec({1, 1}), vec({1, 0})), 1.0);
  EXPECT_DOUBLE_EQ(relative_error(vec({1e-9, 0}), vec({0, 0}), 1.0), 1e-9);
  EXPECT_EQ(relative_error(vec({0, 0}), vec({0, 0})), 0.0);
  EXPECT_TRUE(std::isinf(relative_error(vec({1, 0}), vec({0, 0}))));
  EXPECT_THROW(relative_error(vec({1}), vec({1, 2})), std::invalid_argument);
}

}  // namespace
}  // namespace ctpg
